"""Joint inference of coupling weights and local dynamics in networks of
coupled oscillators from node time series."""
from .dynsys import DiffusiveCoupling, OscillatorModel, chua, fitzhugh_nagumo, lorenz, make_model
from .errors import ConfigError, InferenceDiverged, IntegrationDiverged, NumericError
from .metrics import MetricsConfig, MetricsReport, mi_score, mutual_information_curve, \
    prediction_horizon, threshold_weights, weight_error
from .mlp import LocalModel, TrainConfig, train
from .netgen import CouplingMatrix, NetworkGenSpec
from .netgen import generate as generate_network
from .preprocess import VectorFieldSamples, finite_difference_all, mean_field_estimate, \
    smoothing_spline
from .regression import RegressionConfig, grad_c, run_inference
from .simulate import Trajectory, add_noise, integrate_rk4, normalize

__version__ = "0.1.0"
