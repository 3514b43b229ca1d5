"""
Time functions for schedule configuration.

A schedule config may describe a function of time in three ways:

- an expression string in ``t`` such as ``"exp(10t-8)"`` (implicit
  multiplication allowed), parsed with sympy and compiled to numpy;
- a table ``{"t": [...], "values": [...]}``, evaluated piecewise linearly;
- a plain number, taken as a constant.
"""

from typing import Any, Callable, Optional, Sequence, Union

import numpy as np
import sympy
from sympy.core.function import AppliedUndef
from sympy.parsing.sympy_parser import (
    convert_xor,
    implicit_multiplication_application,
    parse_expr,
    standard_transformations,
)

from ..core.errors import ConfigError

T_SYMBOL = sympy.Symbol('t', real=True)

_TRANSFORMATIONS = standard_transformations + (
    implicit_multiplication_application,
    convert_xor,
)

_ALLOWED_FUNCTIONS = {
    'exp': sympy.exp,
    'log': sympy.log,
    'sqrt': sympy.sqrt,
    'sin': sympy.sin,
    'cos': sympy.cos,
    'tanh': sympy.tanh,
    'expm1': lambda x: sympy.exp(x) - 1,
    'pi': sympy.pi,
    'e': sympy.E,
}

ArrayLike = Union[float, np.ndarray]


class TimeFunction:
    """
    A scalar function of time, vectorized over numpy arrays.

    Instances are immutable. ``derivative()`` is exact for expressions and
    piecewise constant for tables.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], source: Any,
                 expr: Optional[sympy.Expr] = None,
                 derivative_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        self._fn = fn
        self.source = source
        self.expr = expr
        self._derivative_fn = derivative_fn

    def __call__(self, t: ArrayLike) -> ArrayLike:
        arr = np.asarray(t, dtype=float)
        out = np.broadcast_to(np.asarray(self._fn(arr), dtype=float), arr.shape)
        if out.ndim == 0:
            return float(out)
        return np.array(out)

    def derivative(self) -> 'TimeFunction':
        if self.expr is not None:
            return from_sympy(sympy.diff(self.expr, T_SYMBOL), source=f"d/dt({self.source})")
        if self._derivative_fn is not None:
            return TimeFunction(self._derivative_fn, source=f"d/dt({self.source})")
        raise ConfigError(f"No derivative available for time function {self.source!r}")

    def __repr__(self) -> str:
        return f"TimeFunction({self.source!r})"


def from_sympy(expr: sympy.Expr, source: Any = None) -> TimeFunction:
    """Compile a sympy expression in ``t`` to a vectorized TimeFunction."""
    undefined = expr.atoms(AppliedUndef)
    if undefined:
        names = ', '.join(sorted(str(f.func) for f in undefined))
        raise ConfigError(f"Time function {source or expr} uses unknown functions: {names}")
    free = expr.free_symbols - {T_SYMBOL}
    if free:
        names = ', '.join(sorted(str(s) for s in free))
        raise ConfigError(f"Time function {source or expr} uses unknown symbols: {names}")
    compiled = sympy.lambdify(T_SYMBOL, expr, modules='numpy')
    return TimeFunction(compiled, source=source if source is not None else str(expr), expr=expr)


def parse_expression(text: str) -> TimeFunction:
    """
    Parse an expression string in ``t``.

    Args:
        text: Expression such as ``"exp(10t-8)"`` or ``"0.1 + 19.9*t"``

    Returns:
        Compiled TimeFunction

    Raises:
        ConfigError: If the string is not a valid expression in ``t``
    """
    local_dict = dict(_ALLOWED_FUNCTIONS)
    local_dict['t'] = T_SYMBOL
    try:
        expr = parse_expr(text, local_dict=local_dict, global_dict={
            'Integer': sympy.Integer, 'Float': sympy.Float,
            'Rational': sympy.Rational, 'Symbol': sympy.Symbol,
            'Function': sympy.Function,
        }, transformations=_TRANSFORMATIONS)
    except Exception as e:
        raise ConfigError(f"Cannot parse time function {text!r}: {e}") from e
    if not isinstance(expr, sympy.Expr):
        raise ConfigError(f"Time function {text!r} is not an expression")
    return from_sympy(expr, source=text)


def tabulated(t: Sequence[float], values: Sequence[float]) -> TimeFunction:
    """Piecewise-linear interpolation through ``(t, values)``; constant outside."""
    ts = np.asarray(t, dtype=float)
    vs = np.asarray(values, dtype=float)
    if ts.ndim != 1 or ts.shape != vs.shape or ts.size < 2:
        raise ConfigError("Tabulated time function needs matching 't' and 'values' lists of length >= 2")
    if np.any(np.diff(ts) <= 0):
        raise ConfigError("Tabulated time function needs strictly increasing 't'")
    slopes = np.diff(vs) / np.diff(ts)

    def derivative(x: np.ndarray) -> np.ndarray:
        idx = np.clip(np.searchsorted(ts, x, side='right') - 1, 0, slopes.size - 1)
        return slopes[idx]

    return TimeFunction(lambda x: np.interp(x, ts, vs), source={'t': list(ts), 'values': list(vs)},
                        derivative_fn=derivative)


def constant(value: float) -> TimeFunction:
    return from_sympy(sympy.Float(value), source=value)


def time_function(spec: Any) -> TimeFunction:
    """
    Build a TimeFunction from any supported config form.

    Args:
        spec: Expression string, ``{"t": [...], "values": [...]}`` or a number

    Returns:
        TimeFunction
    """
    if isinstance(spec, TimeFunction):
        return spec
    if isinstance(spec, bool):
        raise ConfigError(f"Invalid time function: {spec!r}")
    if isinstance(spec, (int, float)):
        return constant(float(spec))
    if isinstance(spec, str):
        return parse_expression(spec)
    if isinstance(spec, dict) and 't' in spec and 'values' in spec:
        return tabulated(spec['t'], spec['values'])
    raise ConfigError(f"Invalid time function: {spec!r}")
