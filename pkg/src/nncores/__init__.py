"""Neural-network mean functions with kernel-weighted corrective residuals for PDEs."""
from .autodiff import JetBundle, MeanNetwork, forward_jet, init_network, param_gradient
from .gp import BoundaryDataset, CoResField, KernelBlock, KernelConfig, calibrate_nugget
from .optim import OptimConfig, minimize_adam, minimize_lbfgs
from .problems import SamplePlan, make_problem
from .trainer import TrainRun, module_one, train

__version__ = "0.1.0"

__all__ = [
    "BoundaryDataset", "CoResField", "JetBundle", "KernelBlock", "KernelConfig", "MeanNetwork",
    "OptimConfig", "SamplePlan", "TrainRun", "calibrate_nugget", "forward_jet", "init_network",
    "make_problem", "minimize_adam", "minimize_lbfgs", "module_one", "param_gradient", "train",
]
