"""Central finite-difference checks for modules and criteria."""

import numpy as np

STEP = 1e-6
RTOL = 1e-5


def relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||) in the 2-norm; 0 when both vanish."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if scale == 0 else float(np.linalg.norm(analytic - numeric) / scale)


def _numeric(f, x, h):
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def check_module(module, x, rng, h=STEP):
    """Compare backward with finite differences of the scalar sum(r * forward(x)).

    ``r`` is a fixed random projection so every output entry matters.
    Returns {"input": err, <param name>: err, ...}.  Modules with randomness in
    forward must keep it fixed between calls (set ``Dropout.frozen``).
    """
    x = np.array(x, dtype=np.float64)
    out = module.forward(x)
    r = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(r * module.forward(x)))

    module.forward(x)
    module.zero_grad_parameters()
    grad_in = module.backward(x, r).copy()
    analytic = {name: getattr(m, g).copy() for name, m, _, g in module.named_slots()}
    errors = {"input": relative_error(grad_in, _numeric(loss, x, h))}
    for name, m, p, _ in module.named_slots():
        errors[name] = relative_error(analytic[name], _numeric(loss, getattr(m, p), h))
    return errors


def check_criterion(crit, pred, target, h=STEP):
    pred = np.array(pred, dtype=np.float64)
    analytic = crit.backward(pred, target)
    numeric = _numeric(lambda: float(crit.forward(pred, target)), pred, h)
    return relative_error(analytic, numeric)
