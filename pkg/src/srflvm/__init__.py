"""Random-feature latent variable models with block-coordinate variational
inference: a GPLVM whose stationary kernel is learned through a Dirichlet
process mixture over the spectral density of random Fourier features."""

from .bcd_vi import (AdamState, FitConfig, FitReport, FitResult, adam_step, fit,
                     partition_check)
from .datasets import (MissingMaskSpec, SyntheticSpec, generate_clusters,
                       generate_scurve, hybrid_kernel, load_csv, load_idx,
                       make_mask, save_csv)
from .dp_mixture import (Assignments, MixtureComponents, MixtureState, StickState,
                         assignment_kl, expected_log_pi, mixture_moments,
                         sample_alpha, stick_log_moments, update_alpha, update_v)
from .errors import NumericDegeneracyError, ShapeError, SrflvmError, ValidationError
from .evalkit import (EvalReport, expected_kernel, imputation_mse, kernel_recovery,
                      knn_cv, procrustes)
from .features import (FeatureMatrix, SpectralMoments, SpectralPoints,
                       expected_feature_gram, expected_feature_map, feature_map,
                       kernel_estimate)
from .gaussian_block import (GaussianLikelihood, ObservationSet, gaussian_elbo,
                             gaussian_elbo_grad, gaussian_impute, marginal_loglik)
from .latent_state import LatentState, kl_to_prior, sample_latents
from .likelihoods import LikelihoodSpec
from .logistic_block import (LogisticParams, PGMatrix, WeightPosterior,
                             likelihood_params, logistic_elbo, logistic_elbo_grad,
                             logistic_impute, sample_pg_matrix, sample_weights,
                             weight_posterior)
from .polya_gamma import pg_mean, pg_sample, pg_sample_many

__version__ = "0.1.0"
