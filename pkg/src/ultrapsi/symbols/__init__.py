from .expr import (
    Expr, Const, Var, Add, Mul, Pow, Exp, Log, Bracket,
    const, var, xvar, kvar, add, mul, power, recip, exp, log, bracket,
    ZERO, ONE, I, diff, differentiate, evaluate, evaluate_many, node_count,
    dimension, to_text, is_zero, SymbolEvaluationError, OrderCapExceeded,
)
from .dsl import parse_symbol, DSLSyntaxError, GRAMMAR

__all__ = [
    "Expr", "Const", "Var", "Add", "Mul", "Pow", "Exp", "Log", "Bracket",
    "const", "var", "xvar", "kvar", "add", "mul", "power", "recip", "exp", "log",
    "bracket", "ZERO", "ONE", "I", "diff", "differentiate", "evaluate",
    "evaluate_many", "node_count", "dimension", "to_text", "is_zero",
    "SymbolEvaluationError", "OrderCapExceeded", "parse_symbol", "DSLSyntaxError",
    "GRAMMAR",
]
