"""Phase-retrieval algorithms operating on flat-corrected, aligned intensity stacks."""

from .iterative import (
    gd_gradient,
    gd_objective,
    gradient_descent,
    hio_er,
    hio_er_stack,
    in_object_set,
    magnitude_projection,
    project_object,
)
from .linear import alpha_map, ctf, ctf_pure_phase, tie_hom, wtie
from .params import (
    DivergenceError,
    RetrievalError,
    RetrievalParams,
    RetrievalResult,
    format_schedule,
    parse_schedule,
)

__all__ = [
    "DivergenceError",
    "RetrievalError",
    "RetrievalParams",
    "RetrievalResult",
    "alpha_map",
    "ctf",
    "ctf_pure_phase",
    "format_schedule",
    "gd_gradient",
    "gd_objective",
    "gradient_descent",
    "hio_er",
    "hio_er_stack",
    "in_object_set",
    "magnitude_projection",
    "parse_schedule",
    "project_object",
    "tie_hom",
    "wtie",
]
