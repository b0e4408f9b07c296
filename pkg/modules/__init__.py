"""
ergolab - Modules Package

This package contains the core modules of the ergolab numerical laboratory:
- laws, fields: marginal laws and hash-indexed scalar fields on Z^d
- envelopes: decay envelopes and d-good certificates
- ergodic, covering: weighted ergodic averages, maximal function, covering lemma
- environment, models, ensemble: random environments, generators and Palm estimates
- measure: atomic measures, rescaling and tail functionals
- generator, paths, solvers: the random-walk generator, resolvent, semigroup and paths
- homogenizer: corrector problem and effective matrix
- functions, reference: test-function library and the Brownian reference
- exclusion: symmetric simple exclusion and its hydrodynamic check
- experiments, report_logger, storage, cache: the experiment harness
- utils, errors, interfaces: shared helpers
"""

__version__ = '0.1.0'

# Import key components for easier access
from .environment import Environment, LatticeMap
from .errors import (AtomError, ConfigError, ConvergenceError, EnvironmentRejected, ErgolabError,
                     InvariantViolation, TruncationError)
from .experiments import ExperimentConfig, ExperimentReport, RunContext, run
from .generator import SparseGenerator, build_generator, resolvent, semigroup
from .homogenizer import corrector_solve, effective_matrix
from .measure import AtomicMeasure
from .models import create_model, generate_environment
from .utils import load_config, setup_logging
