"""
Brute-force reference computations.

Grid prox, Gaussian-convolution scores and posterior moments by Simpson
quadrature, empirical Wasserstein-1, sample metrics and bound checks. These
are deliberately independent of the closed forms in ``potentials`` so they
can serve as references for them.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, stats
from scipy.integrate import simpson

from .errors import DomainError, OracleError
from .potentials import (
    Composite,
    ProxFriendly,
    moreau_score,
    score_gap_bound,
    total_score_error_constant,
)
from .schedules import Schedule, pgm_coefficients

logger = logging.getLogger("proxdiff.oracles")

DEFAULT_PANELS = 4096
BOX_HALF_WIDTHS = 12.0
W1_GRID = 10_000
_LOG_TINY = float(np.log(np.finfo(float).tiny))


@dataclass(frozen=True)
class Quadrature1D:
    """Composite Simpson rule on [lo, hi] with an even number of panels."""

    lo: float
    hi: float
    panels: int = DEFAULT_PANELS

    def __post_init__(self):
        if not self.hi > self.lo:
            raise OracleError(f"Quadrature needs hi > lo, got [{self.lo}, {self.hi}]")
        if self.panels < 2 or self.panels % 2:
            raise OracleError(f"Simpson needs an even number of panels, got {self.panels}")

    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.panels + 1)

    def integrate(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        return simpson(values, x=self.nodes(), axis=axis)

    def refined(self) -> 'Quadrature1D':
        return Quadrature1D(self.lo, self.hi, 2 * self.panels)


# ---------------------------------------------------------------------------
# Optimization references
# ---------------------------------------------------------------------------

def _objective(target: Union[ProxFriendly, Composite]) -> Callable[[np.ndarray], np.ndarray]:
    return target.value


def grid_prox(target: Union[ProxFriendly, Composite], lam: float, x: Any,
              resolution: float = 1e-4, box: Optional[Tuple[Any, Any]] = None) -> np.ndarray:
    """
    Prox by direct minimization on a regular grid, refined once around the best cell.

    Args:
        target: g or the composite U
        lam: Positive smoothing parameter
        x: Point of dimension d <= 2
        resolution: Final grid spacing
        box: Search box (lo, hi); defaults to x +- max(4, 12 sqrt(lam)) intersected with dom

    Returns:
        Approximate argmin of target(u) + |u - x|^2 / (2 lam)

    Raises:
        OracleError: If d > 2 or the objective is infinite on the whole box
    """
    dim = target.dim
    if dim > 2:
        raise OracleError(f"grid_prox supports d <= 2, got {dim}")
    if lam <= 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    z = np.asarray(x, dtype=float).reshape(dim)
    if box is None:
        half = max(4.0, BOX_HALF_WIDTHS * np.sqrt(lam))
        lo, hi = z - half, z + half
        dom = _support(target)
        if dom is not None:
            lo, hi = np.maximum(lo, dom[0]), np.minimum(hi, dom[1])
            # a point far outside dom still has its prox on the domain boundary
            lo, hi = np.minimum(lo, dom[1]), np.maximum(hi, dom[0])
    else:
        lo = np.broadcast_to(np.asarray(box[0], dtype=float), (dim,))
        hi = np.broadcast_to(np.asarray(box[1], dtype=float), (dim,))
    value = _objective(target)

    def search(lo, hi, n):
        axes = [np.linspace(lo[i], hi[i], n) for i in range(dim)]
        mesh = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, dim)
        with np.errstate(invalid='ignore', over='ignore'):
            obj = np.asarray(value(mesh), dtype=float) + np.sum((mesh - z) ** 2, axis=1) / (2.0 * lam)
        obj = np.where(np.isnan(obj), np.inf, obj)
        if not np.any(np.isfinite(obj)):
            raise OracleError("Prox objective is infinite on the whole search box")
        best = int(np.argmin(obj))
        steps = (hi - lo) / max(n - 1, 1)
        return mesh[best], steps

    coarse_n = 2001 if dim == 1 else 401
    best, steps = search(lo, hi, coarse_n)
    n_fine = int(np.ceil(2.0 * np.max(steps) / resolution)) + 1
    n_fine = min(max(n_fine, 3), 200_001 if dim == 1 else 1201)
    best, _ = search(best - steps, best + steps, n_fine)
    return best


def _support(target) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    g = target.g if isinstance(target, Composite) else target
    return g.bounding_box()


def exact_prox_numeric(c: Composite, lam: float, x: Any, tol: float = 1e-12,
                       max_iter: int = 200_000) -> np.ndarray:
    """
    Joint Prox_U^lam(x) by proximal gradient on beta f + |u - x|^2 / (2 lam), g handled by its prox.

    Works on a batch (n, d); linear convergence with rate beta L lam / (1 + beta L lam).
    """
    if lam <= 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if c.beta == 0.0 or c.f.L == 0.0:
        out = c.g.prox(pts, lam)
        return out if np.ndim(x) > 1 else out[0]
    eta = 1.0 / (c.beta * c.f.L + 1.0 / lam)
    u = c.g.prox(pts, lam)
    for _ in range(max_iter):
        grad = c.beta * c.f.grad(u) + (u - pts) / lam
        nxt = c.g.prox(u - eta * grad, eta)
        if np.max(np.abs(nxt - u)) <= tol * (1.0 + np.max(np.abs(u))):
            u = nxt
            break
        u = nxt
    else:
        raise OracleError(f"Proximal gradient did not reach tolerance {tol} in {max_iter} iterations")
    return u if np.ndim(x) > 1 else u[0]


def composite_minimizer(c: Composite, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """
    argmin of f over dom(g) plus g, by proximal gradient with step 1/L.

    For indicator g this is the constrained minimizer of f, independent of beta.
    """
    weight = c.beta if c.beta > 0 else 1.0
    scale = weight * c.f.L
    eta = 1.0 / scale if scale > 0 else 1.0
    u = c.g.prox(np.zeros(c.dim), eta)
    for _ in range(max_iter):
        nxt = c.g.prox(u - eta * weight * c.f.grad(u), eta)
        if np.linalg.norm(nxt - u) <= tol:
            return nxt
        u = nxt
    raise OracleError(f"Composite minimizer did not converge to {tol}")


# ---------------------------------------------------------------------------
# Quadrature references
# ---------------------------------------------------------------------------

def _log_prior(c: Composite, u: np.ndarray) -> np.ndarray:
    with np.errstate(over='ignore', invalid='ignore'):
        val = -np.asarray(c.value(u), dtype=float)
    return np.where(np.isnan(val), -np.inf, val)


def _posterior_box(c: Composite, z: np.ndarray, lam: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mode of the posterior of x0 given z = x_t / mu, and a box of +-12 sqrt(lam) around it."""
    mode = np.atleast_1d(exact_prox_numeric(c, lam, z))
    half = BOX_HALF_WIDTHS * np.sqrt(lam)
    lo, hi = mode - half, mode + half
    dom = c.g.bounding_box()
    if dom is not None:
        lo, hi = np.maximum(lo, dom[0]), np.minimum(hi, dom[1])
    return mode, lo, hi


def _posterior_integrals(c: Composite, z: np.ndarray, lam: float, panels: int) -> Tuple[float, np.ndarray]:
    """log of int pi0(u) N(z; u, lam) du (up to the Gaussian constant) and the posterior mean."""
    _, lo, hi = _posterior_box(c, z, lam)
    d = c.dim
    if np.any(hi - lo <= 0):
        raise OracleError("Posterior box is empty")
    quads = [Quadrature1D(float(lo[i]), float(hi[i]), panels) for i in range(d)]
    axes = [q.nodes() for q in quads]
    mesh = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)
    flat = mesh.reshape(-1, d)
    logw = _log_prior(c, flat) - np.sum((flat - z) ** 2, axis=1) / (2.0 * lam)
    shift = np.max(logw)
    if not np.isfinite(shift):
        raise OracleError("Posterior density vanishes on the quadrature box")
    w = np.exp(logw - shift).reshape(mesh.shape[:-1])

    def integrate(values):
        out = values
        for i in range(d - 1, -1, -1):
            out = quads[i].integrate(out, axis=i)
        return out

    mass = float(integrate(w))
    if not mass > 0 or not np.isfinite(mass):
        raise OracleError("Quadrature of the posterior mass failed")
    mean = np.array([float(integrate(w * mesh[..., i])) for i in range(d)]) / mass
    return float(np.log(mass) + shift), mean


def _check_dim(c: Composite, max_dim: int) -> None:
    if c.dim > max_dim:
        raise OracleError(f"Quadrature oracle supports d <= {max_dim}, got {c.dim}")


def posterior_mean(c: Composite, s: Schedule, t: float, x_t: Any, panels: int = DEFAULT_PANELS,
                   richardson: bool = False) -> np.ndarray:
    """E[x0 | x_t] for x_t = mu(t) x0 + sigma(t) xi with x0 ~ exp(-U)."""
    _check_dim(c, 2)
    mu, lam = float(s.mu(t)), float(s.lam(t))
    if lam <= 0:
        raise OracleError(f"Posterior undefined at lambda(t) = {lam}")
    z = np.atleast_1d(np.asarray(x_t, dtype=float)) / mu
    if c.dim == 2 and panels == DEFAULT_PANELS:
        panels = 512
    log_conv, mean = _posterior_integrals(c, z, lam, panels)
    # the convolution pi_t(x_t) itself, in absolute terms
    log_pi_t = log_conv - 0.5 * c.dim * np.log(2.0 * np.pi * lam) - c.dim * np.log(mu)
    if log_pi_t < _LOG_TINY:
        # the shifted quadrature still gives the ratio
        logger.debug(f"pi_t(x_t) below the float range at x_t={x_t}: log pi_t = {log_pi_t:.1f}")
    if richardson:
        _, fine = _posterior_integrals(c, z, lam, 2 * panels)
        if np.max(np.abs(fine - mean)) > 1e-8 * (1.0 + np.max(np.abs(fine))):
            raise OracleError(f"Quadrature not converged: {mean} vs {fine}")
        mean = fine
    return mean


def true_score_quadrature(c: Composite, s: Schedule, t: float, x_t: Any,
                          panels: int = DEFAULT_PANELS, richardson: bool = False) -> np.ndarray:
    """
    Stein score of pi_t = law of mu(t) x0 + sigma(t) xi with x0 ~ exp(-U).

    Computed as the ratio of the derivative of the Gaussian convolution to the
    convolution, which equals (mu E[x0 | x_t] - x_t) / sigma^2.

    Raises:
        OracleError: For d > 2, lambda(t) = 0 or a vanishing posterior on the box
    """
    x = np.atleast_1d(np.asarray(x_t, dtype=float))
    mean = posterior_mean(c, s, t, x, panels=panels, richardson=richardson)
    mu, sigma2 = float(s.mu(t)), float(s.sigma2(t))
    return (mu * mean - x) / sigma2


def posterior_moments_quadrature(c: Composite, s: Schedule, t: float, x_t: float,
                                 panels: int = DEFAULT_PANELS) -> Tuple[float, float]:
    """
    Posterior mean (quadrature) and mode (bounded golden-section search) in d = 1.

    Returns:
        Tuple of (mean, mode)
    """
    _check_dim(c, 1)
    mu, lam = float(s.mu(t)), float(s.lam(t))
    z = np.atleast_1d(float(x_t) / mu)
    mean = float(posterior_mean(c, s, t, x_t, panels=panels)[0])
    guess, lo, hi = _posterior_box(c, z, lam)

    def neg_log_post(u):
        val = float(np.asarray(c.value(np.array([u]))))
        return val + (u - z[0]) ** 2 / (2.0 * lam)

    if hi[0] - lo[0] <= 0:
        return mean, float(guess[0])
    res = optimize.minimize_scalar(neg_log_post, bounds=(float(lo[0]), float(hi[0])), method='bounded',
                                   options={'xatol': 1e-12})
    if not res.success:
        raise OracleError(f"Mode search failed: {res.message}")
    mode = float(res.x)
    if neg_log_post(float(guess[0])) < res.fun:
        mode = float(guess[0])
    return mean, mode


def score_table_1d(c: Composite, s: Schedule, t: float, x_grid: np.ndarray,
                   panels: int = 2048) -> np.ndarray:
    """Stein score on a 1D grid of x_t values, sharing one quadrature box."""
    _check_dim(c, 1)
    mu, lam, sigma2 = float(s.mu(t)), float(s.lam(t)), float(s.sigma2(t))
    if lam <= 0:
        raise OracleError(f"Score undefined at lambda(t) = {lam}")
    z = np.asarray(x_grid, dtype=float) / mu
    ends = exact_prox_numeric(c, lam, np.array([[z.min()], [z.max()]]))
    half = BOX_HALF_WIDTHS * np.sqrt(lam)
    lo, hi = float(ends[0, 0] - half), float(ends[1, 0] + half)
    dom = c.g.bounding_box()
    if dom is not None:
        lo, hi = max(lo, float(dom[0][0])), min(hi, float(dom[1][0]))
    quad = Quadrature1D(lo, hi, panels)
    u = quad.nodes()
    logw = _log_prior(c, u[:, None])[None, :] - (u[None, :] - z[:, None]) ** 2 / (2.0 * lam)
    shift = np.max(logw, axis=1, keepdims=True)
    if not np.all(np.isfinite(shift)):
        raise OracleError("Posterior density vanishes on the quadrature box")
    w = np.exp(logw - shift)
    mass = quad.integrate(w, axis=1)
    mean = quad.integrate(w * u[None, :], axis=1) / mass
    return (mu * mean - np.asarray(x_grid, dtype=float)) / sigma2


# ---------------------------------------------------------------------------
# Wasserstein-1
# ---------------------------------------------------------------------------

def _as_1d(samples: Any, name: str) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional samples, got shape {arr.shape}")
    if arr.size == 0:
        raise DomainError(f"{name} is empty")
    return arr


def empirical_w1(a: Any, b: Any, grid: int = W1_GRID) -> float:
    """
    Wasserstein-1 in one dimension.

    Args:
        a: Samples
        b: Samples, or a distribution with a ``ppf`` (e.g. a frozen scipy.stats law)
        grid: Number of quantile midpoints used against a distribution

    Returns:
        Mean absolute difference of sorted samples, or of quantile functions
        on the midpoint grid (i + 1/2) / grid
    """
    xs = np.sort(_as_1d(a, 'a'))
    if hasattr(b, 'ppf'):
        q = (np.arange(grid) + 0.5) / grid
        idx = np.minimum((q * xs.size).astype(int), xs.size - 1)
        return float(np.mean(np.abs(xs[idx] - b.ppf(q))))
    ys = np.sort(_as_1d(b, 'b'))
    if xs.size == ys.size:
        return float(np.mean(np.abs(xs - ys)))
    return float(stats.wasserstein_distance(xs, ys))


def gaussian_w1_1d(m1: float, s1: float, m2: float, s2: float) -> float:
    """Closed-form W1 between N(m1, s1^2) and N(m2, s2^2)."""
    a = m1 - m2
    b = abs(s1 - s2)
    if b == 0:
        return abs(a)
    r = a / b
    return float(b * (2.0 * stats.norm.pdf(r) + r * (2.0 * stats.norm.cdf(r) - 1.0)))


# ---------------------------------------------------------------------------
# Sample metrics
# ---------------------------------------------------------------------------

def metrics(batch: Any, c: Composite, optimum: Optional[np.ndarray] = None,
            compute_optimum: bool = True) -> Dict[str, Any]:
    """
    Feasibility rate and optimality gap of a sample batch.

    Args:
        batch: SampleBatch (or an (n, d) array)
        c: Composite whose g defines the feasible set
        optimum: Known minimizer x*; computed by composite_minimizer when omitted
        compute_optimum: Allow computing x* when it is not given

    Returns:
        Dict with 'feasibility' (fraction, boundary inside to 1e-9) and
        'optimality_gap' (mean f(x) - f(x*), None when x* is unavailable)
    """
    samples = np.atleast_2d(getattr(batch, 'samples', batch))
    inside = np.atleast_1d(c.g.contains(samples))
    result: Dict[str, Any] = {'feasibility': float(np.mean(inside)), 'optimality_gap': None, 'optimum': None}
    if optimum is None and compute_optimum:
        try:
            optimum = composite_minimizer(c)
        except OracleError as e:
            logger.warning(f"No optimum available: {e}")
            optimum = None
    if optimum is not None:
        f_star = float(c.f.value(optimum))
        result['optimality_gap'] = float(np.mean(c.f.value(samples)) - f_star)
        result['optimum'] = np.asarray(optimum, dtype=float).tolist()
    return result


def histogram(samples: Any, bins: int = 50, lo: Optional[float] = None,
              hi: Optional[float] = None) -> Dict[str, List[float]]:
    """Counts and edges of a 1D histogram."""
    xs = _as_1d(samples, 'samples')
    lo = float(xs.min()) if lo is None else lo
    hi = float(xs.max()) if hi is None else hi
    counts, edges = np.histogram(xs, bins=bins, range=(lo, hi))
    return {'counts': counts.tolist(), 'edges': edges.tolist()}


def kde_mode(samples: Any, bandwidth: Optional[float] = None, grid: int = 2001) -> float:
    """
    Mode of a Gaussian KDE in 1D.

    The default bandwidth is half the sample standard deviation, wider than
    Scott's rule so the location of a flat peak is stable.
    """
    xs = _as_1d(samples, 'samples')
    sd = float(np.std(xs))
    if sd == 0:
        return float(xs[0])
    h = 0.5 * sd if bandwidth is None else float(bandwidth)
    kde = stats.gaussian_kde(xs, bw_method=h / sd)
    pts = np.linspace(xs.min(), xs.max(), grid)
    return float(pts[int(np.argmax(kde(pts)))])


# ---------------------------------------------------------------------------
# Exact law for linear-Gaussian chains
# ---------------------------------------------------------------------------

def linear_gaussian_law(s: Schedule, c: Composite, init_mean: Optional[np.ndarray] = None,
                        init_cov: Optional[np.ndarray] = None,
                        coefficient_fn=pgm_coefficients) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact mean and covariance of the PGM output when the joint prox is affine.

    Requires a composite with a closed-form joint prox whose prior part is
    quadratic or zero (Gaussian target).

    Returns:
        Tuple of (mean, covariance) of the landed sample x_{K+1}
    """
    if not c.has_exact_prox:
        raise OracleError("Exact law needs a closed-form joint prox")
    d = c.dim
    H = np.zeros((d, d))
    h = np.zeros(d)
    if c.beta > 0 and c.f.kind == 'quadratic':
        H += c.beta * c.f.params['A']
        h += c.beta * c.f.params['b']
    if c.g.kind == 'quadratic':
        H += c.g.A
        h += c.g.b
    elif c.g.kind != 'zero':
        raise OracleError(f"Exact law needs a linear prox, got g of kind {c.g.kind}")
    T = s.T
    mean = np.zeros(d) if init_mean is None else np.asarray(init_mean, dtype=float).reshape(d)
    cov = float(s.sigma2(T)) * np.eye(d) if init_cov is None else np.asarray(init_cov, dtype=float)
    eye = np.eye(d)
    for k in range(s.K):
        tau = s.tau(k)
        mu, lam = float(s.mu(tau)), float(s.lam(tau))
        a1, a2, a3 = coefficient_fn(s, k)
        M = np.linalg.inv(eye + lam * H)
        G = a1 * eye + a2 * M / mu
        mean = G @ mean - a2 * lam * (M @ h)
        cov = G @ cov @ G.T + a3 * a3 * eye
    if s.K > 0:
        tau = s.tau(s.K)
        mu, lam = float(s.mu(tau)), float(s.lam(tau))
        M = np.linalg.inv(eye + lam * H)
        G = float(s.mu(0.0)) / mu * M
        mean = G @ mean - float(s.mu(0.0)) * lam * (M @ h)
        cov = G @ cov @ G.T
    return mean, cov


def gaussian_target(c: Composite) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of exp(-U) for a quadratic U."""
    H = np.zeros((c.dim, c.dim))
    h = np.zeros(c.dim)
    if c.beta > 0 and c.f.kind == 'quadratic':
        H += c.beta * c.f.params['A']
        h += c.beta * c.f.params['b']
    if c.g.kind == 'quadratic':
        H += c.g.A
        h += c.g.b
    cov = np.linalg.inv(H)
    return -cov @ h, cov


# ---------------------------------------------------------------------------
# Bound checks
# ---------------------------------------------------------------------------

def bound_checks(c: Composite, s: Schedule, sweep: Iterable[Tuple[float, Any]],
                 source: Any = 'split') -> Dict[str, Any]:
    """
    Compare measured score gaps with the analytic bounds on a sweep of (t, x_t).

    The gap of the exact Moreau score (joint prox) is checked against
    (1/mu) sqrt(2d / (beta m lam^2 + lam)); the gap of the split Moreau score
    against M (1 + |x_t|) / sigma^2 with M = C_f / sqrt(beta). The second
    check needs beta >= 2, m > 0 and a compact dom(g); otherwise it is skipped
    with a note.
    """
    _check_dim(c, 2)
    notes: List[str] = []
    M = total_score_error_constant(c)
    if c.f.m <= 0:
        notes.append("f is not strongly convex: gap bound degrades to sqrt(2d/lambda)/mu")
    if M is None:
        notes.append("total score error bound needs beta >= 2, m > 0 and L > 0: skipped")
    if not c.g.is_compact:
        notes.append("dom(g) is unbounded: compactness-dependent total score error bound skipped")
        M = None
    entries = []
    for t, x_t in sweep:
        x = np.atleast_1d(np.asarray(x_t, dtype=float))
        mu, lam, sigma2 = float(s.mu(t)), float(s.lam(t)), float(s.sigma2(t))
        true = true_score_quadrature(c, s, t, x)
        exact = (mu * np.atleast_1d(exact_prox_numeric(c, lam, x / mu)) - x) / sigma2
        split = np.atleast_1d(moreau_score(c, s, t, x, source=source))
        gap_exact = float(np.linalg.norm(true - exact))
        gap_split = float(np.linalg.norm(true - split))
        exact_bound = score_gap_bound(c, mu, lam)
        total_bound = None if M is None else float(M * (1.0 + np.linalg.norm(x)) / sigma2)
        passed = gap_exact <= exact_bound * (1 + 1e-9) + 1e-9
        if total_bound is not None:
            passed = passed and gap_split <= total_bound * (1 + 1e-9) + 1e-9
        entries.append({
            't': float(t), 'x_t': x.tolist(),
            'true_score': true.tolist(), 'moreau_exact': exact.tolist(), 'moreau_split': split.tolist(),
            'gap_exact': gap_exact, 'gap_split': gap_split,
            'gap_bound': exact_bound, 'total_bound': total_bound,
            'margin': exact_bound - gap_exact, 'passed': bool(passed),
        })
    return {
        'passed': all(e['passed'] for e in entries),
        'max_gap_exact': max((e['gap_exact'] for e in entries), default=0.0),
        'max_gap_split': max((e['gap_split'] for e in entries), default=0.0),
        'min_margin': min((e['margin'] for e in entries), default=float('inf')),
        'entries': entries,
        'notes': notes,
    }
