"""Wiener-Hammerstein identification by structured symmetric CPD, with
Cramér-Rao bounds and a Monte Carlo harness."""
from ._accel import backend_name
from .crb import CrbReport, crb_matrix, crb_per_param, oblique_projection
from .estimators import CalsOptions, EstimateResult, cals_iterate, cptoep, estimate, n_cals, quasi_newton_refine
from .multilinear import MultisetDomain, cpd_reconstruct, multiset_domain
from .whmodel import WhParams, canonicalize, check_identifiability, volterra_kernel

__version__ = "0.1.0"

__all__ = [
    "CalsOptions",
    "CrbReport",
    "EstimateResult",
    "MultisetDomain",
    "WhParams",
    "backend_name",
    "cals_iterate",
    "canonicalize",
    "check_identifiability",
    "cpd_reconstruct",
    "cptoep",
    "crb_matrix",
    "crb_per_param",
    "estimate",
    "multiset_domain",
    "n_cals",
    "oblique_projection",
    "quasi_newton_refine",
    "volterra_kernel",
]
