"""SNFGP: PCA, an affine-coupling normalizing flow and independent latent
Gaussian processes for conditional modeling of high-dimensional spectra."""

from .archive import load_model, save_model
from .data import Dataset, SyntheticSpec, default_synthetic_spec, generate_synthetic, split_dataset
from .errors import (
    ArchiveError,
    CorruptArchiveError,
    InferenceError,
    InputError,
    InvariantError,
    NumericalError,
    SnfgpError,
    TrainingError,
    VersionMismatchError,
)
from .evaluate import EvalReport, evaluate_model, spectrum_metrics
from .flow import FlowParams, flow_forward, flow_inverse, init_flow
from .gp import GpHyperparams, GpPredictive, log_marginal_gradients, log_marginal_likelihood, predict
from .inverse import GridSpec, InferenceResult, infer_mle, likelihood_interval
from .model import SnfgpModel, TrainConfig, TrainingTrace, conditional_log_likelihood, sample_conditional, train
from .pca import PcaBasis, pca_fit, pca_log_det_correction, pca_project, pca_reconstruct

__version__ = "0.1.0"
