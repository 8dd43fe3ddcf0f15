from .clmm import ClmmFit, FitOptions, fit_clmm
from .lmm import LmmFit, LmmOptions, LmmProblem, fit_lmm
from .profile import SigmaBProfile, likelihood_root, profile_ci_sigma_b, profile_loglik_sigma_b

__all__ = [
    "ClmmFit",
    "FitOptions",
    "fit_clmm",
    "LmmFit",
    "LmmOptions",
    "LmmProblem",
    "fit_lmm",
    "SigmaBProfile",
    "likelihood_root",
    "profile_ci_sigma_b",
    "profile_loglik_sigma_b",
]
