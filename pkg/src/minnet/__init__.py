"""A small numpy neural-network library: layers, criteria, convolution, training and reports."""

from .conv import AvgPool2D, Conv2D, Dropout, Flatten, MaxPool2D, Pool2D, Reshape
from .criteria import CrossEntropyCriterion, MSECriterion, NLLCriterion, criterion
from .data import LabeledDataset, load_mnist, make_parity_dataset, make_xor_dataset
from .nn import (HardLim, Identity, Linear, Module, ReLU, Sequential, Sigmoid, SoftMax, Tanh,
                 WeightDecayWrapper, load_parameters, save_parameters)
from .optim import EarlyStopping, Optimizer, adam_step, early_stop_check, sgd_momentum_step
from .training import TrainOptions, TrainReport, TrainingDiverged, evaluate, train

__version__ = "0.1.0"
