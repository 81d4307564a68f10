"""Joint parameter and state estimation under correlated process and measurement noise."""
from corrkal._backend import NATIVE
from corrkal.model import ObserverCanonicalModel, build_F, model_to_theta, theta_to_model
from corrkal.noise import NoiseSpec, UMode, build_joint_covariance, prbs_input, sample_correlated
from corrkal.rgels import DivergenceError, JointResult, RgelsOptions, run_joint
from corrkal.simulate import Dataset, load_dataset, save_dataset, simulate

__version__ = "0.1.0"

__all__ = [
    "NATIVE",
    "Dataset",
    "DivergenceError",
    "JointResult",
    "NoiseSpec",
    "ObserverCanonicalModel",
    "RgelsOptions",
    "UMode",
    "build_F",
    "build_joint_covariance",
    "load_dataset",
    "model_to_theta",
    "prbs_input",
    "run_joint",
    "sample_correlated",
    "save_dataset",
    "simulate",
    "theta_to_model",
]
