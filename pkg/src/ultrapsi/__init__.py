"""Symbolic-numeric workbench for infinite-order pseudodifferential calculus:
weight sequences, symbol classes, parametrices and grid quantization."""

__version__ = "0.1.0"

from .weights import WeightSequence, make_gevrey, parse_sequence, check_condition, associated_function
from .symbols import parse_symbol, to_text, differentiate, evaluate
from .parametrix import parametrix_terms, composition_terms, truncate_with_cutoffs, CutoffSpec
from .quantize import GridFunction, HermiteBasis, apply_operator, spectral_solve, decay_fit

__all__ = [
    "__version__", "WeightSequence", "make_gevrey", "parse_sequence", "check_condition",
    "associated_function", "parse_symbol", "to_text", "differentiate", "evaluate",
    "parametrix_terms", "composition_terms", "truncate_with_cutoffs", "CutoffSpec",
    "GridFunction", "HermiteBasis", "apply_operator", "spectral_solve", "decay_fit",
]
