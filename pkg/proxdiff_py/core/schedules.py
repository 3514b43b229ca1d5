"""
Diffusion schedules mu(t), sigma^2(t), lambda(t) and the
exponential-interpolation coefficients of the reverse sampler.

Three kinds are supported:

- ``ve``: mu == 1 and a user-supplied nondecreasing lambda(t);
- ``vp``: linear beta(t) = beta_min + (beta_max - beta_min) t with closed forms;
- ``custom``: drift a(t) and diffusion b(t); mu and lambda are tabulated by
  composite Simpson quadrature and interpolated between table nodes.

Sampler time runs forward on the grid t_0 = 0 < ... < t_K = T - t_min while the
schedule is evaluated at tau_k = T - t_k.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import DomainError, SingularTimeError
from ..utils.expressions import TimeFunction, time_function

logger = logging.getLogger("proxdiff.schedules")

# Relative clamp used when lambda(0) = 0 makes the final coefficient singular.
T_MIN_FRACTION = 1e-4
PANELS_PER_CELL = 1024
_TIME_TOL = 1e-12


@dataclass(frozen=True)
class Schedule:
    """
    Immutable diffusion schedule with a sampler grid.

    The callables take scalar or array times in [0, T]. sigma2 equals
    mu**2 * lambda: exactly for ve and custom, to rounding for the vp
    closed forms.
    """

    kind: str
    T: float
    grid: np.ndarray
    mu_fn: Callable[[Any], Any] = field(repr=False)
    lambda_fn: Callable[[Any], Any] = field(repr=False)
    sigma2_fn: Callable[[Any], Any] = field(repr=False)
    drift_fn: Callable[[Any], Any] = field(repr=False)
    diffusion2_fn: Callable[[Any], Any] = field(repr=False)
    t_min: float = 0.0
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def K(self) -> int:
        return int(self.grid.size - 1)

    @property
    def delta(self) -> float:
        """Largest grid step."""
        if self.grid.size < 2:
            return 0.0
        return float(np.max(np.diff(self.grid)))

    def tau(self, k: int) -> float:
        return self.T - float(self.grid[k])

    def mu(self, t):
        return self.mu_fn(t)

    def lam(self, t):
        return self.lambda_fn(t)

    def sigma2(self, t):
        return self.sigma2_fn(t)

    def drift(self, t):
        """a(t) = d log mu / dt."""
        return self.drift_fn(t)

    def diffusion2(self, t):
        """b^2(t) = mu^2(t) d lambda / dt."""
        return self.diffusion2_fn(t)

    def describe(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'T': self.T, 'K': self.K, 't_min': self.t_min, **self.params}


def uniform_grid(T: float, K: int, t_min: float = 0.0) -> np.ndarray:
    """Uniform grid of K+1 times on [0, T - t_min]."""
    if K < 0:
        raise DomainError(f"K must be nonnegative, got {K}")
    if not 0.0 <= t_min < T:
        raise DomainError(f"t_min must lie in [0, T), got {t_min}")
    if K == 0:
        return np.zeros(1)
    return np.linspace(0.0, T - t_min, K + 1)


def _default_t_min(T: float, lam0: float, t_min: Optional[float]) -> float:
    if t_min is not None:
        return float(t_min)
    return 0.0 if lam0 > 0.0 else T_MIN_FRACTION * T


def _check_monotone(T: float, mu_fn, lambda_fn, kind: str) -> None:
    ts = np.linspace(0.0, T, 2049)
    lam = np.asarray(lambda_fn(ts), dtype=float)
    mu = np.asarray(mu_fn(ts), dtype=float)
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(mu))):
        raise DomainError(f"{kind} schedule is not finite on [0, {T}]")
    if np.any(lam < 0.0):
        raise DomainError(f"{kind} schedule has negative lambda")
    if np.any(np.diff(lam) < -1e-12 * (1.0 + np.abs(lam[1:]))):
        raise DomainError(f"{kind} schedule lambda(t) is not nondecreasing")
    if np.any(mu <= 0.0) or np.any(mu > 1.0 + 1e-12):
        raise DomainError(f"{kind} schedule mu(t) must lie in (0, 1]")
    if np.any(np.diff(mu) > 1e-12):
        raise DomainError(f"{kind} schedule mu(t) is not nonincreasing")


def ve_schedule(lambda_spec: Any = "exp(10t-8)", T: float = 1.0, K: int = 100,
                t_min: Optional[float] = None) -> Schedule:
    """
    Variance-exploding schedule: mu == 1, sigma^2 = lambda.

    Args:
        lambda_spec: Time function for lambda(t) (expression, table or constant)
        T: Horizon
        K: Number of sampler steps
        t_min: Grid clamp; defaults to 0 when lambda(0) > 0

    Returns:
        Schedule
    """
    if T <= 0:
        raise DomainError(f"T must be positive, got {T}")
    lam: TimeFunction = time_function(lambda_spec)
    dlam = lam.derivative()
    ones = lambda t: np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else 1.0
    zeros = lambda t: np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else 0.0
    _check_monotone(T, ones, lam, 've')
    t_min = _default_t_min(T, float(lam(0.0)), t_min)
    return Schedule(
        kind='ve', T=float(T), grid=uniform_grid(T, K, t_min),
        mu_fn=ones, lambda_fn=lam, sigma2_fn=lam,
        drift_fn=zeros, diffusion2_fn=dlam,
        t_min=t_min, params={'lambda': lam.source},
    )


def vp_schedule(beta_min: float = 0.1, beta_max: float = 20.0, T: float = 1.0, K: int = 100,
                t_min: Optional[float] = None) -> Schedule:
    """Variance-preserving schedule with linear beta(t); a = -beta/2, b^2 = beta."""
    if T <= 0:
        raise DomainError(f"T must be positive, got {T}")
    if beta_min < 0 or beta_max < beta_min:
        raise DomainError(f"Need 0 <= beta_min <= beta_max, got {beta_min}, {beta_max}")

    def beta(t):
        return beta_min + (beta_max - beta_min) * np.asarray(t, dtype=float)

    def integral(t):
        t = np.asarray(t, dtype=float)
        return beta_min * t + 0.5 * (beta_max - beta_min) * t * t

    def _scalar(fn):
        def wrapped(t):
            out = fn(t)
            return float(out) if np.ndim(out) == 0 else out
        return wrapped

    mu_fn = _scalar(lambda t: np.exp(-0.5 * integral(t)))
    lambda_fn = _scalar(lambda t: np.expm1(integral(t)))
    sigma2_fn = _scalar(lambda t: -np.expm1(-integral(t)))
    drift_fn = _scalar(lambda t: -0.5 * beta(t))
    diffusion2_fn = _scalar(beta)
    _check_monotone(T, mu_fn, lambda_fn, 'vp')
    t_min = _default_t_min(T, 0.0, t_min)
    return Schedule(
        kind='vp', T=float(T), grid=uniform_grid(T, K, t_min),
        mu_fn=mu_fn, lambda_fn=lambda_fn, sigma2_fn=sigma2_fn,
        drift_fn=drift_fn, diffusion2_fn=diffusion2_fn,
        t_min=t_min, params={'beta_min': beta_min, 'beta_max': beta_max},
    )


def custom_schedule(drift_spec: Any, diffusion_spec: Any, T: float = 1.0, K: int = 100,
                    t_min: Optional[float] = None, panels_per_cell: int = PANELS_PER_CELL) -> Schedule:
    """
    Schedule from drift a(t) and diffusion b(t).

    mu(t) = exp(int_0^t a) and lambda(t) = int_0^t b^2 / mu^2 are tabulated by
    composite Simpson quadrature on ``panels_per_cell`` panels per grid cell and
    interpolated linearly between table nodes.
    """
    if T <= 0:
        raise DomainError(f"T must be positive, got {T}")
    a = time_function(drift_spec)
    b = time_function(diffusion_spec)
    cells = max(K, 1)
    n_panels = cells * panels_per_cell
    if n_panels % 2:
        n_panels += 1
    nodes = np.linspace(0.0, T, n_panels + 1)
    a_vals = np.asarray(a(nodes), dtype=float) * np.ones_like(nodes)
    b2_vals = np.asarray(b(nodes), dtype=float) ** 2 * np.ones_like(nodes)
    log_mu = cumulative_simpson(a_vals, x=nodes, initial=0.0)
    mu_vals = np.exp(log_mu)
    lam_vals = cumulative_simpson(b2_vals / mu_vals ** 2, x=nodes, initial=0.0)
    # Simpson can undershoot by rounding near t=0
    lam_vals = np.maximum.accumulate(np.maximum(lam_vals, 0.0))

    def interp(values):
        def fn(t):
            out = np.interp(np.asarray(t, dtype=float), nodes, values)
            return float(out) if np.ndim(out) == 0 else out
        return fn

    mu_fn = interp(mu_vals)
    lambda_fn = interp(lam_vals)

    def sigma2_fn(t):
        return mu_fn(t) ** 2 * lambda_fn(t)

    def diffusion2_fn(t):
        return np.asarray(b(t), dtype=float) ** 2 if np.ndim(t) else float(b(t)) ** 2

    _check_monotone(T, mu_fn, lambda_fn, 'custom')
    t_min = _default_t_min(T, float(lam_vals[0]), t_min)
    logger.debug(f"Tabulated custom schedule on {n_panels} panels")
    return Schedule(
        kind='custom', T=float(T), grid=uniform_grid(T, K, t_min),
        mu_fn=mu_fn, lambda_fn=lambda_fn, sigma2_fn=sigma2_fn,
        drift_fn=a, diffusion2_fn=diffusion2_fn,
        t_min=t_min, params={'drift': a.source, 'diffusion': b.source},
    )


def eval_schedule(s: Schedule, t: float) -> Tuple[float, float, float]:
    """
    Evaluate the schedule at time t.

    Args:
        s: Schedule
        t: Time in [0, T]

    Returns:
        Tuple of (mu, sigma2, lambda)

    Raises:
        DomainError: If t lies outside [0, T]
    """
    t = float(t)
    if not (-_TIME_TOL <= t <= s.T * (1.0 + _TIME_TOL)):
        raise DomainError(f"t={t} outside [0, {s.T}]")
    t = min(max(t, 0.0), s.T)
    return float(s.mu(t)), float(s.sigma2(t)), float(s.lam(t))


def coefficients_from_values(mu_k: float, lam_k: float, mu_k1: float, lam_k1: float) -> Tuple[float, float, float]:
    """alpha coefficients from the schedule at tau_k and tau_{k+1}."""
    if lam_k == 0.0:
        raise SingularTimeError("lambda(tau_k) = 0; clamp the grid away from t = T")
    rho = lam_k1 / lam_k
    if rho > 1.0 + 1e-12:
        raise DomainError(f"lambda must not increase along the reverse grid (ratio {rho})")
    gap = max(1.0 - rho, 0.0)
    alpha1 = rho * mu_k1 / mu_k
    alpha2 = mu_k1 * gap
    alpha3 = mu_k1 * np.sqrt(lam_k1) * np.sqrt(gap)
    return float(alpha1), float(alpha2), float(alpha3)


def pgm_coefficients(s: Schedule, k: int) -> Tuple[float, float, float]:
    """
    Exponential-interpolation coefficients for step k.

    Args:
        s: Schedule
        k: Step index, 0 <= k < K

    Returns:
        Tuple of (alpha1, alpha2, alpha3)

    Raises:
        DomainError: If k is out of range
        SingularTimeError: If lambda(tau_k) = 0
    """
    if not 0 <= k < s.K:
        raise DomainError(f"Step index {k} outside [0, {s.K})")
    tau_k, tau_k1 = s.tau(k), s.tau(k + 1)
    return coefficients_from_values(float(s.mu(tau_k)), float(s.lam(tau_k)),
                                    float(s.mu(tau_k1)), float(s.lam(tau_k1)))


def coefficient_table(s: Schedule, coefficient_fn: Callable[[Schedule, int], Tuple[float, float, float]] = pgm_coefficients) -> np.ndarray:
    """All K coefficient triples as a (K, 3) array."""
    if s.K == 0:
        return np.zeros((0, 3))
    return np.array([coefficient_fn(s, k) for k in range(s.K)], dtype=float)


def log_derivative_bounds(s: Schedule) -> Dict[str, Any]:
    """
    Range of |d log lambda/dt| and |d log mu/dt| over the sampled times.

    Reports whether the bounded-schedule condition M_mu <= 1/2 and
    m_lambda >= 1 holds on [t_min, T]; it is a diagnostic, not enforced.
    """
    lo = s.t_min if s.t_min > 0 else s.T * T_MIN_FRACTION
    ts = np.linspace(lo, s.T, 513)
    lam = np.asarray(s.lam(ts), dtype=float)
    mu = np.asarray(s.mu(ts), dtype=float)
    dlam = np.asarray(s.diffusion2(ts), dtype=float) / mu ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        dlog_lam = np.abs(np.where(lam > 0, dlam / lam, np.inf))
    dlog_mu = np.abs(np.asarray(s.drift(ts), dtype=float) * np.ones_like(ts))
    m_lambda, M_lambda = float(np.min(dlog_lam)), float(np.max(dlog_lam))
    m_mu, M_mu = float(np.min(dlog_mu)), float(np.max(dlog_mu))
    return {
        'm_lambda': m_lambda,
        'M_lambda': M_lambda,
        'm_mu': m_mu,
        'M_mu': M_mu,
        'bounded_schedule': bool(M_mu <= 0.5 and m_lambda >= 1.0),
    }


def schedule_from_dict(cfg: Dict[str, Any]) -> Schedule:
    """
    Build a schedule from its JSON description.

    Examples:
        {"kind": "ve", "T": 1.0, "K": 100, "lambda": "exp(10t-8)"}
        {"kind": "vp", "T": 1.0, "K": 100, "beta_min": 0.1, "beta_max": 20.0}
        {"kind": "custom", "T": 1.0, "K": 100, "drift": "-t/2", "diffusion": "sqrt(t)"}
    """
    kind = str(cfg.get('kind', 've')).lower()
    T = float(cfg.get('T', 1.0))
    K = int(cfg.get('K', 100))
    t_min = cfg.get('t_min')
    if kind == 've':
        return ve_schedule(cfg.get('lambda', "exp(10t-8)"), T=T, K=K, t_min=t_min)
    if kind == 'vp':
        return vp_schedule(float(cfg.get('beta_min', 0.1)), float(cfg.get('beta_max', 20.0)),
                           T=T, K=K, t_min=t_min)
    if kind == 'custom':
        if 'drift' not in cfg or 'diffusion' not in cfg:
            raise DomainError("custom schedule needs 'drift' and 'diffusion'")
        return custom_schedule(cfg['drift'], cfg['diffusion'], T=T, K=K, t_min=t_min)
    raise DomainError(f"Unknown schedule kind: {kind}")


def with_steps(s: Schedule, K: int) -> Schedule:
    """Same schedule on a uniform grid with K steps."""
    return replace(s, grid=uniform_grid(s.T, K, s.t_min))
