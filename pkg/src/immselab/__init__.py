"""Simulation and estimation of mutual information / MMSE identities for scalar Ito systems

    dY = sqrt(r) F(t, X, Y) dt + G(t, Y) dW.
"""

from .classify import SnrClass, SnrClassReport, classify_system, z_inverse, z_transform
from .errors import (ConfigError, ImmseError, InvalidModel, NonDegeneracyViolation, NonFinite, NotStrongSnr,
                     QuadratureUnstable, TooFewReplicates, TooLarge, UnsupportedInput)
from .estimate import (causal_posterior, conditional_phi, eval_phi, log_rn, path_loglik, smoothed_posterior)
from .inputs import (FiniteConstant, GaussConstant, TelegraphMarkov, build_entry, catalog, enumerate_support,
                     sample_input)
from .mmse import (EnsembleSpec, estimate_mmse_surface, identity_residuals, info_curve, instantaneous_info,
                   mi_direct, mi_duncan, mi_gsv)
from .oracle import bpsk_oracle, gauss_oracle, telegraph_bruteforce
from .sde import FunctionalSystem, NoiseBundle, Path, TimeGrid, simulate_coupled, simulate_output

__version__ = "0.1.0"
