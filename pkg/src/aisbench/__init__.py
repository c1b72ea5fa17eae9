"""Log-likelihood evaluation for decoder-based generative models.

Estimates log p(x) with annealed importance sampling over HMC transitions,
validates the estimates with bidirectional Monte Carlo on simulated data, and
benchmarks the KDE, ELBO, and IWAE-bound baselines against them.
"""

from .ais import (AisConfig, BdmcReport, ChainRun, EstimationError, Schedule,
                  bdmc, combine_chains, forward_ais, make_schedule,
                  posterior_decode, reverse_ais)
from .data import Dataset, IdxFormatError, binarize, dequantize, load_mnist_idx
from .estimators import (KdeConfig, SigmaGrid, elbo, iwae_bound, kde_estimate,
                         kde_log_weights, optimal_sigma_eval, sigma_sweep)
from .harness import EstimateReport, ExperimentConfig, checkpoint_curve, run_experiment
from .hmc import HmcParams, HmcStats, adapt_step_size, hmc_step, leapfrog
from .images import export_image_grid, read_pgm
from .models import (AnnealingPath, EncoderProposal, GenerativeModel,
                     ObservationModel, annealed_grad, annealed_logf, grad_log_prior,
                     log_obs, log_prior)
from .nets import (MlpNetwork, ModelFormatError, load_model, load_model_file,
                   random_network, save_model, save_model_file)

__version__ = "0.1.0"
