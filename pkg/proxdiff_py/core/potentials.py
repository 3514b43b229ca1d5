"""
Composite potentials U = beta * f + g.

f is smooth (value and gradient), g is prox-friendly (closed-form proximal
operator). Every operation accepts a single point of shape (d,) or a batch of
shape (n, d) and returns a result of matching leading shape.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import numpy as np

from .errors import DomainError, ShapeError, SingularTimeError
from .schedules import Schedule

logger = logging.getLogger("proxdiff.potentials")

MEMBERSHIP_TOL = 1e-9

ProxMap = Callable[[np.ndarray, float], np.ndarray]


def _as_points(x: Any, dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != dim or arr.ndim > 2:
        raise ShapeError(f"Expected points of dimension {dim}, got shape {arr.shape}")
    return arr


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam > 0.0 or not np.isfinite(lam):
        raise DomainError(f"lambda must be positive and finite, got {lam}")
    return lam


def _symmetric(A: Any, dim: Optional[int] = None) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(A, dtype=float))
    if mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"Matrix must be square, got {mat.shape}")
    if dim is not None and mat.shape[0] != dim:
        raise ShapeError(f"Matrix must be {dim}x{dim}, got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise DomainError("Matrix must be symmetric")
    return 0.5 * (mat + mat.T)


# ---------------------------------------------------------------------------
# Smooth part
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Smooth:
    """
    Smooth convex term f with its constants.

    Attributes:
        dim: Dimension d
        value_fn: x -> f(x) for points of shape (..., d)
        grad_fn: x -> grad f(x), same shape as x
        L: Smoothness constant
        m: Strong-convexity constant (0 if merely convex)
        kind: Factory name, used in reports
    """

    dim: int
    value_fn: Callable[[np.ndarray], Any] = field(repr=False)
    grad_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    L: float
    m: float
    kind: str = 'smooth'
    params: Dict[str, Any] = field(default_factory=dict, repr=False)

    def value(self, x: Any) -> Any:
        return self.value_fn(_as_points(x, self.dim))

    def grad(self, x: Any) -> np.ndarray:
        return self.grad_fn(_as_points(x, self.dim))


def quadratic_smooth(A: Any, b: Any = None) -> Smooth:
    """
    f(x) = 1/2 x^T A x + b^T x with A symmetric positive semidefinite.

    L and m are the extreme eigenvalues of A.
    """
    A = _symmetric(A)
    dim = A.shape[0]
    b = np.zeros(dim) if b is None else np.asarray(b, dtype=float).reshape(dim)
    eig = np.linalg.eigvalsh(A)
    if eig[0] < -1e-10:
        raise DomainError(f"Quadratic f must be convex, smallest eigenvalue {eig[0]}")

    def value(x):
        return 0.5 * np.einsum('...i,ij,...j->...', x, A, x) + x @ b

    def grad(x):
        return x @ A + b

    return Smooth(dim=dim, value_fn=value, grad_fn=grad, L=float(eig[-1]), m=float(max(eig[0], 0.0)),
                  kind='quadratic', params={'A': A, 'b': b})


def zero_smooth(dim: int) -> Smooth:
    return Smooth(dim=dim, value_fn=lambda x: np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0,
                  grad_fn=np.zeros_like, L=0.0, m=0.0, kind='zero')


def logcosh_smooth(center: Any, weight: float = 1.0, m: float = 0.0) -> Smooth:
    """
    f(x) = weight * sum log cosh(x - center) + m/2 |x|^2.

    A smoothed absolute deviation; L = weight + m.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    dim = center.size
    if weight < 0 or m < 0:
        raise DomainError("logcosh weight and m must be nonnegative")

    def value(x):
        z = x - center
        # log cosh z = |z| + log1p(exp(-2|z|)) - log 2
        lc = np.abs(z) + np.log1p(np.exp(-2.0 * np.abs(z))) - np.log(2.0)
        return weight * np.sum(lc, axis=-1) + 0.5 * m * np.sum(x * x, axis=-1)

    def grad(x):
        return weight * np.tanh(x - center) + m * x

    return Smooth(dim=dim, value_fn=value, grad_fn=grad, L=float(weight + m), m=float(m),
                  kind='logcosh', params={'center': center, 'weight': weight, 'm': m})


# ---------------------------------------------------------------------------
# Prox-friendly part
# ---------------------------------------------------------------------------

class ProxFriendly:
    """
    Convex term g with a closed-form proximal operator.

    Subclasses implement ``_value`` and ``_prox`` on arrays of shape (..., d).
    """

    kind = 'base'

    def __init__(self, dim: int):
        if dim < 1:
            raise DomainError(f"Dimension must be positive, got {dim}")
        self.dim = int(dim)

    def value(self, x: Any) -> Any:
        return self._value(_as_points(x, self.dim))

    def prox(self, x: Any, lam: float) -> np.ndarray:
        return self._prox(_as_points(x, self.dim), _check_lambda(lam))

    def contains(self, x: Any, tol: float = MEMBERSHIP_TOL) -> Any:
        """Membership in dom(g); boundary counts as inside."""
        arr = _as_points(x, self.dim)
        return np.ones(arr.shape[:-1], dtype=bool) if arr.ndim > 1 else True

    @property
    def diameter(self) -> float:
        return float('inf')

    @property
    def is_compact(self) -> bool:
        return np.isfinite(self.diameter)

    def bounding_box(self):
        """(lo, hi) arrays enclosing dom(g), or None when unbounded."""
        return None

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'dim': self.dim}

    def _value(self, x: np.ndarray) -> Any:
        raise NotImplementedError

    def _prox(self, x: np.ndarray, lam: float) -> np.ndarray:
        raise NotImplementedError


class Zero(ProxFriendly):
    kind = 'zero'

    def _value(self, x):
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0

    def _prox(self, x, lam):
        return x.copy()


class Interval(ProxFriendly):
    """Indicator of the box [lo, hi]^d (componentwise bounds allowed)."""

    kind = 'interval'

    def __init__(self, lo: Any = -1.0, hi: Any = 1.0, dim: int = 1):
        lo_arr = np.broadcast_to(np.asarray(lo, dtype=float), (dim,)).copy()
        hi_arr = np.broadcast_to(np.asarray(hi, dtype=float), (dim,)).copy()
        if np.any(hi_arr < lo_arr):
            raise DomainError(f"Interval needs lo <= hi, got {lo}, {hi}")
        super().__init__(dim)
        self.lo = lo_arr
        self.hi = hi_arr

    def _value(self, x):
        return np.where(self._inside(x, 0.0), 0.0, np.inf)[()]

    def _inside(self, x, tol):
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def _prox(self, x, lam):
        return np.clip(x, self.lo, self.hi)

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return self._inside(_as_points(x, self.dim), tol)[()]

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def describe(self):
        return {'kind': self.kind, 'dim': self.dim, 'lo': self.lo.tolist(), 'hi': self.hi.tolist()}


class Ball(ProxFriendly):
    """Indicator of the centered Euclidean ball of radius r."""

    kind = 'ball'

    def __init__(self, r: float = 1.0, dim: int = 2):
        if r < 0:
            raise DomainError(f"Ball radius must be nonnegative, got {r}")
        super().__init__(dim)
        self.r = float(r)

    def _value(self, x):
        return np.where(np.linalg.norm(x, axis=-1) <= self.r + MEMBERSHIP_TOL, 0.0, np.inf)[()]

    def _prox(self, x, lam):
        norm = np.linalg.norm(x, axis=-1, keepdims=True)
        scale = np.where(norm > self.r, self.r / np.where(norm > 0, norm, 1.0), 1.0)
        return x * scale

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return (np.linalg.norm(_as_points(x, self.dim), axis=-1) <= self.r + tol)[()]

    @property
    def diameter(self):
        return 2.0 * self.r

    def bounding_box(self):
        return np.full(self.dim, -self.r), np.full(self.dim, self.r)

    def describe(self):
        return {'kind': self.kind, 'dim': self.dim, 'r': self.r}


class L1(ProxFriendly):
    """g(x) = weight * |x|_1; prox is soft-thresholding."""

    kind = 'l1'

    def __init__(self, weight: float = 1.0, dim: int = 1):
        if weight < 0:
            raise DomainError(f"L1 weight must be nonnegative, got {weight}")
        super().__init__(dim)
        self.weight = float(weight)

    def _value(self, x):
        return self.weight * np.sum(np.abs(x), axis=-1)[()]

    def _prox(self, x, lam):
        thresh = self.weight * lam
        return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)

    def describe(self):
        return {'kind': self.kind, 'dim': self.dim, 'weight': self.weight}


class Quadratic(ProxFriendly):
    """g(x) = 1/2 x^T A x + b^T x; prox solves (I + lam A) u = x - lam b."""

    kind = 'quadratic'

    def __init__(self, A: Any, b: Any = None):
        A = _symmetric(A)
        super().__init__(A.shape[0])
        eig = np.linalg.eigvalsh(A)
        if eig[0] < -1e-10:
            raise DomainError(f"Quadratic g must be convex, smallest eigenvalue {eig[0]}")
        self.A = A
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float).reshape(self.dim)
        self.L = float(eig[-1])
        self.m = float(max(eig[0], 0.0))

    def _value(self, x):
        return (0.5 * np.einsum('...i,ij,...j->...', x, self.A, x) + x @ self.b)[()]

    def _prox(self, x, lam):
        system = np.eye(self.dim) + lam * self.A
        rhs = x - lam * self.b
        # system is symmetric so row-vector batches solve as rhs @ inv(system)
        return np.linalg.solve(system, rhs.T).T

    def describe(self):
        return {'kind': self.kind, 'dim': self.dim, 'A': self.A.tolist(), 'b': self.b.tolist()}


# ---------------------------------------------------------------------------
# Composite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Composite:
    """U = beta * f + g."""

    f: Smooth
    g: ProxFriendly
    beta: float = 1.0

    def __post_init__(self):
        if self.f.dim != self.g.dim:
            raise ShapeError(f"f has dimension {self.f.dim} but g has {self.g.dim}")
        if not self.beta >= 0.0 or not np.isfinite(self.beta):
            raise DomainError(f"beta must be finite and nonnegative, got {self.beta}")

    @property
    def dim(self) -> int:
        return self.f.dim

    def value(self, x: Any) -> Any:
        return self.beta * self.f.value(x) + self.g.value(x)

    @property
    def has_exact_prox(self) -> bool:
        if self.beta == 0.0 or self.f.kind == 'zero':
            return True
        return self.f.kind == 'quadratic' and self.g.kind in ('zero', 'quadratic')

    def exact_prox(self, x: Any, lam: float) -> np.ndarray:
        """
        Joint prox of U when it has a closed form.

        Raises:
            DomainError: If the composite has no closed-form joint prox
        """
        lam = _check_lambda(lam)
        pts = _as_points(x, self.dim)
        if self.beta == 0.0 or self.f.kind == 'zero':
            return self.g.prox(pts, lam)
        if not self.has_exact_prox:
            raise DomainError(f"No closed-form prox for {self.f.kind} + {self.g.kind}")
        A = self.beta * self.f.params['A']
        b = self.beta * self.f.params['b']
        if self.g.kind == 'quadratic':
            A = A + self.g.A
            b = b + self.g.b
        system = np.eye(self.dim) + lam * A
        return np.linalg.solve(system, (pts - lam * b).T).T

    def describe(self) -> Dict[str, Any]:
        return {'f': self.f.kind, 'g': self.g.describe(), 'beta': self.beta}


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def prox(g: ProxFriendly, lam: float, x: Any) -> np.ndarray:
    """
    Proximal operator argmin_u g(u) + |u - x|^2 / (2 lam).

    Args:
        g: Prox-friendly term
        lam: Positive smoothing parameter
        x: Point (d,) or batch (n, d)

    Returns:
        Prox of each point

    Raises:
        DomainError: If lam <= 0 or x is not finite
    """
    pts = _as_points(x, g.dim)
    if not np.all(np.isfinite(pts)):
        raise DomainError("prox needs finite input")
    return g.prox(pts, lam)


def moreau_envelope(g: ProxFriendly, lam: float, x: Any) -> Any:
    """g^lam(x) = g(p) + |p - x|^2 / (2 lam) with p = prox(g, lam, x)."""
    pts = _as_points(x, g.dim)
    p = prox(g, lam, pts)
    return g.value(p) + np.sum((p - pts) ** 2, axis=-1)[()] / (2.0 * float(lam))


def split_prox(c: Composite, lam: float, x: Any) -> np.ndarray:
    """Prox_g^lam(x - beta lam grad f(x)), the splitting approximation of Prox_U^lam."""
    lam = _check_lambda(lam)
    pts = _as_points(x, c.dim)
    return c.g.prox(pts - c.beta * lam * c.f.grad(pts), lam)


def resolve_prox(c: Composite, source: Any = 'split') -> ProxMap:
    """
    Map ``(x, lam) -> approx Prox_U^lam(x)`` for a prox source.

    Args:
        c: Composite potential
        source: 'split', 'joint_exact', or a callable prox of g (e.g. a learned
            network) that is plugged into the splitting

    Returns:
        Callable (x, lam) -> array
    """
    if callable(source):
        def learned(x, lam):
            pts = _as_points(x, c.dim)
            return source(pts - c.beta * lam * c.f.grad(pts), lam)
        return learned
    if source in ('split', 'analytic'):
        return lambda x, lam: split_prox(c, lam, x)
    if source == 'joint_exact':
        if not c.has_exact_prox:
            raise DomainError(f"joint_exact prox unavailable for {c.f.kind} + {c.g.kind}")
        return lambda x, lam: c.exact_prox(x, lam)
    raise DomainError(f"Unknown prox source: {source!r}")


def moreau_score(c: Composite, s: Schedule, t: float, x_t: Any, source: Any = 'split') -> np.ndarray:
    """
    (mu(t) P - x_t) / sigma^2(t) with P an approximation of Prox_U^lambda(t)(x_t / mu(t)).

    Raises:
        SingularTimeError: If lambda(t) = 0
    """
    mu, sigma2, lam = float(s.mu(t)), float(s.sigma2(t)), float(s.lam(t))
    if lam <= 0.0 or sigma2 <= 0.0:
        raise SingularTimeError(f"Moreau score undefined at t={t}: lambda(t)={lam}")
    pts = _as_points(x_t, c.dim)
    p = resolve_prox(c, source)(pts / mu, lam)
    return (mu * p - pts) / sigma2


def splitting_bound(c: Composite, x: Any) -> Any:
    """(4 / (beta L)) (|grad f(x)| + 1), infinite when beta L = 0."""
    scale = c.beta * c.f.L
    norm = np.linalg.norm(c.f.grad(x), axis=-1)
    if scale <= 0.0:
        return np.full(np.shape(norm), np.inf)[()]
    return (4.0 / scale) * (norm + 1.0)


def splitting_hypotheses_hold(c: Composite, lam: float) -> bool:
    """beta >= 2 and lam <= (2 beta^{3/2} L)^{-1}."""
    if c.beta < 2.0 or c.f.L <= 0.0:
        return False
    return float(lam) <= 1.0 / (2.0 * c.beta ** 1.5 * c.f.L)


def score_gap_bound(c: Composite, mu: float, lam: float) -> float:
    """
    (1/mu) sqrt(2d / (beta m lam^2 + lam)) bounding |true score - Moreau score|.

    With m = 0 this degrades to (1/mu) sqrt(2d / lam).
    """
    return float(np.sqrt(2.0 * c.dim / (c.beta * c.f.m * lam * lam + lam)) / mu)


def total_score_error_constant(c: Composite) -> Optional[float]:
    """
    M = C_f / sqrt(beta) with C_f = max{2 sqrt 2, sqrt(2d/m) + 2 sqrt 2 |grad f(0)| / L}.

    None when the constant is undefined (m = 0, L = 0 or beta < 2).
    """
    if c.f.m <= 0.0 or c.f.L <= 0.0 or c.beta < 2.0:
        return None
    grad0 = float(np.linalg.norm(c.f.grad(np.zeros(c.dim))))
    c_f = max(2.0 * np.sqrt(2.0), np.sqrt(2.0 * c.dim / c.f.m) + 2.0 * np.sqrt(2.0) * grad0 / c.f.L)
    return float(c_f / np.sqrt(c.beta))


# ---------------------------------------------------------------------------
# Config builders
# ---------------------------------------------------------------------------

def smooth_from_dict(cfg: Dict[str, Any], dim: Optional[int] = None) -> Smooth:
    kind = str(cfg.get('kind', 'zero')).lower()
    if kind == 'quadratic':
        return quadratic_smooth(cfg['A'], cfg.get('b'))
    if kind == 'zero':
        return zero_smooth(int(cfg.get('dim', dim or 1)))
    if kind == 'logcosh':
        center = cfg.get('center', [0.0] * int(cfg.get('dim', dim or 1)))
        return logcosh_smooth(center, float(cfg.get('weight', 1.0)), float(cfg.get('m', 0.0)))
    raise DomainError(f"Unknown smooth kind: {kind}")


def prox_friendly_from_dict(cfg: Dict[str, Any], dim: Optional[int] = None) -> ProxFriendly:
    kind = str(cfg.get('kind', 'zero')).lower()
    d = int(cfg.get('dim', dim or 1))
    if kind == 'zero':
        return Zero(d)
    if kind in ('interval', 'interval_indicator'):
        return Interval(cfg.get('lo', -1.0), cfg.get('hi', 1.0), dim=d)
    if kind in ('ball', 'ball_indicator'):
        return Ball(float(cfg.get('r', 1.0)), dim=d)
    if kind == 'l1':
        return L1(float(cfg.get('weight', 1.0)), dim=d)
    if kind == 'quadratic':
        return Quadratic(cfg['A'], cfg.get('b'))
    raise DomainError(f"Unknown prox-friendly kind: {kind}")


def random_constrained_quadratic(dim: int = 2, instance_seed: int = 0, r: float = 1.0,
                                 beta: float = 10.0) -> Composite:
    """
    Random constrained quadratic: f = 1/2 x^T A x + b^T x on the ball of radius r.

    A has eigenvalues drawn log-uniform in [0.5, 2] with a random rotation;
    b is uniform in [-1, 1]^d.
    """
    rng = np.random.default_rng(instance_seed)
    eig = np.exp(rng.uniform(np.log(0.5), np.log(2.0), size=dim))
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    A = (q * eig) @ q.T
    b = rng.uniform(-1.0, 1.0, size=dim)
    return Composite(quadratic_smooth(A, b), Ball(r, dim=dim), beta=float(beta))


def potential_from_dict(cfg: Dict[str, Any]) -> Composite:
    """
    Build a composite potential from its JSON description.

    Examples:
        {"f": {"kind": "quadratic", "A": [[1.0]], "b": [0.0]},
         "g": {"kind": "interval", "lo": -1, "hi": 1}, "beta": 10.0}
        {"kind": "random_quadratic", "dim": 2, "instance_seed": 0, "r": 1.0, "beta": 10}
    """
    if cfg.get('kind') == 'random_quadratic':
        return random_constrained_quadratic(int(cfg.get('dim', 2)), int(cfg.get('instance_seed', 0)),
                                            float(cfg.get('r', 1.0)), float(cfg.get('beta', 10.0)))
    f_cfg = cfg.get('f', {'kind': 'zero'})
    g_cfg = cfg.get('g', {'kind': 'zero'})
    f = smooth_from_dict(f_cfg, dim=g_cfg.get('dim') if 'A' not in g_cfg else len(g_cfg['A']))
    g = prox_friendly_from_dict(g_cfg, dim=f.dim)
    return Composite(f, g, beta=float(cfg.get('beta', 1.0)))
