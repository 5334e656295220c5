"""Information criteria for Bayesian models with intensified priors.

Main entry points: :func:`piic.criteria.evaluate` for criteria at a fixed
hyper-parameter, :func:`piic.hyperopt.minimize_criterion` for selection, and
:func:`piic.experiments.run_comparison` for the simulation harness.
"""

__version__ = "0.1.0"

from .models import Dataset, LikelihoodModel, ModelError, PriorSpec  # noqa: E402
from .inference import (  # noqa: E402
    ActiveSet,
    Posterior,
    SamplerConfig,
    active_set,
    conjugate_posterior,
    map_estimate,
    mcmc_sample,
    restricted_posterior,
)
from .criteria import (  # noqa: E402
    CriterionReport,
    add_xi_penalty,
    dic,
    evaluate,
    fisher_pair,
    j_pair,
    piic,
    piic2,
    predictive_logdens,
    waic,
    xi_score,
)

__all__ = [
    "ActiveSet",
    "CriterionReport",
    "Dataset",
    "LikelihoodModel",
    "ModelError",
    "Posterior",
    "PriorSpec",
    "SamplerConfig",
    "active_set",
    "add_xi_penalty",
    "conjugate_posterior",
    "dic",
    "evaluate",
    "fisher_pair",
    "j_pair",
    "map_estimate",
    "mcmc_sample",
    "piic",
    "piic2",
    "predictive_logdens",
    "restricted_posterior",
    "waic",
    "xi_score",
]
