"""Probability-flow encoding, latent interpolation and high-dimensional checks."""

from .interpolate import (ClipSpec, InterpolationPlan, clip_latent, noise_diffusion_interpolate,
                          noise_diffusion_latent, noise_inject_interpolate, noise_inject_latent,
                          plan_from_lambda, slerp, slerp_interpolate)
from .mixture import GaussianMixtureModel
from .mlp import ScoreNetParams, TrainConfig, dsm_loss, grad_check, net_score, train
from .ode import OdeConfig, SigmaSchedule, decode, encode, heun_step, karras_grid
from .stats import StatReport, sphere_radius_diag
from .tensor import NumericalError, ShapeError, child_rng, dot, linear_combine, make_rng, norm, sample_gaussian

__version__ = "0.1.0"
