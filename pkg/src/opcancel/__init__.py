"""Cancellation and weak cancellation of constant-coefficient elliptic operators."""

from .operator import Operator, OperatorFormatError, load_operator, parse_operator, serialize_operator, symbol
from .registry import GALLERY, builtin

__all__ = [
    "GALLERY",
    "Operator",
    "OperatorFormatError",
    "builtin",
    "load_operator",
    "parse_operator",
    "serialize_operator",
    "symbol",
]
__version__ = "0.1.0"
