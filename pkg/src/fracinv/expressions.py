"""Tiny arithmetic grammar for formulas carried in config files.

Configs describe coefficients and test profiles as strings rather than
code.  The grammar is a strict whitelist over the Python ast: numeric
literals, the declared variable names, the operators + - * / ** with
unary minus, parentheses, calls to sin, cos, exp, sqrt, and abs, and
the constants pi and e.  Everything else is rejected with the
offending construct named, so a config cannot smuggle in attribute
access, imports, or comprehensions.
"""

from __future__ import annotations

import ast
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_BINARY = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.true_divide,
    ast.Pow: np.power,
}


def _evaluate(node: ast.expr, env: dict, field: str):
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ConfigError(field, f"literal {node.value!r} is not a number")
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        if node.id in _CONSTANTS:
            return _CONSTANTS[node.id]
        raise ConfigError(field, f"unknown name {node.id!r}")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
        op = _BINARY[type(node.op)]
        return op(_evaluate(node.left, env, field), _evaluate(node.right, env, field))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        value = _evaluate(node.operand, env, field)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ConfigError(field, "only sin, cos, exp, sqrt, abs may be called")
        if len(node.args) != 1 or node.keywords:
            raise ConfigError(field, f"{node.func.id} takes exactly one positional argument")
        return _FUNCTIONS[node.func.id](_evaluate(node.args[0], env, field))
    raise ConfigError(field, f"construct {type(node).__name__} is not part of the grammar")


def compile_expression(
    text, variables: Sequence[str] = ("x",), field: str = "expression"
) -> Callable[..., np.ndarray]:
    """Parse a formula into a callable of the named variable arrays.

    Numbers are accepted directly and treated as constant formulas.  The
    returned callable broadcasts its result to the common shape of the
    variable arrays, so a constant formula still fills the grid.
    """
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        raise ConfigError(field, f"expected a formula string or number, got {type(text).__name__}")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(field, f"syntax error in formula {text!r}: {exc.msg}") from exc

    names = tuple(variables)

    def evaluate(*arrays: np.ndarray) -> np.ndarray:
        if len(arrays) != len(names):
            raise ConfigError(field, f"formula takes {names}, got {len(arrays)} arrays")
        env = dict(zip(names, arrays))
        out = _evaluate(tree.body, env, field)
        shape = np.broadcast_shapes(*(np.shape(a) for a in arrays)) if arrays else ()
        result = np.broadcast_to(np.asarray(out, dtype=float), shape).copy()
        if not np.all(np.isfinite(result)):
            raise ConfigError(field, f"formula {text!r} produced non-finite values")
        return result

    return evaluate
