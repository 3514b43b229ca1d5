"""
Reverse-time samplers.

- ``pgm``: exponential-interpolation iteration driven by the Moreau score;
- ``pgm_em``: Euler-Maruyama discretization of the same reverse process
  (optionally its probability-flow ODE);
- ``pula``: proximal unadjusted Langevin algorithm at fixed lambda;
- ``prox_point_ode``: the noise-free PGM recursion;
- ``analytic_score_sde`` / ``projected_diffusion``: reverse SDE with the
  quadrature Stein score and early stopping, the latter projecting every
  iterate onto dom(g).

Chains are vectorized; each chain draws its noise from its own stream so
results depend only on (seed, chain index).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import DivergenceError, DomainError, OracleError
from .oracles import score_table_1d, true_score_quadrature
from .potentials import Composite, resolve_prox
from .proxnet import ProxNetParams, as_prox_map
from .schedules import Schedule, coefficient_table, pgm_coefficients, uniform_grid
from ..utils.streams import ChainStreams, noise_blocks

logger = logging.getLogger("proxdiff.samplers")

SAMPLER_KINDS = ('pgm', 'pgm_em', 'pula', 'prox_point_ode', 'projected_diffusion', 'analytic_score_sde')
BASELINE_KINDS = ('projected_diffusion', 'analytic_score_sde')


@dataclass(frozen=True)
class SamplerConfig:
    """
    Sampler settings.

    prox_source is 'analytic' (closed-form prox of g inside the splitting),
    'joint_exact' (closed-form joint prox of U) or trained ProxNetParams.
    """

    kind: str
    schedule: Schedule
    chains: int = 1000
    seed: int = 0
    prox_source: Any = 'analytic'
    noise: bool = True
    init: Optional[np.ndarray] = None
    store_trajectory: bool = False
    workers: int = 1
    flow: bool = False
    delta_L: Optional[float] = None
    lambda_fixed: Optional[float] = None
    n_iters: Optional[int] = None
    early_stop: float = 0.2
    score_grid: int = 801

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise DomainError(f"Unknown sampler kind: {self.kind}")
        if self.chains < 1 or self.workers < 1:
            raise DomainError("chains and workers must be positive")
        if self.kind == 'pula':
            if self.delta_L is None or self.delta_L <= 0:
                raise DomainError("pula needs a positive step size delta_L")
            if self.lambda_fixed is None or self.lambda_fixed <= 0:
                raise DomainError("pula needs a positive lambda_fixed")
        if self.kind in ('pgm', 'pgm_em', 'prox_point_ode') and self.schedule.K > 0:
            if float(self.schedule.lam(self.schedule.tau(self.schedule.K))) <= 0:
                raise DomainError("lambda must be positive at the end of the grid; clamp t_min")
        if not 0 < self.early_stop < 1:
            raise DomainError("early_stop is a fraction of T in (0, 1)")

    @property
    def prox_label(self) -> str:
        return 'learned' if isinstance(self.prox_source, ProxNetParams) else str(self.prox_source)


@dataclass
class SampleBatch:
    """Samples of shape (chains, d) with provenance."""

    samples: np.ndarray
    sampler: str
    seed: int
    steps: int
    metadata: Dict[str, Any] = field(default_factory=dict)
    trajectory: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise DivergenceError(f"{self.sampler} produced non-finite samples")

    @property
    def chains(self) -> int:
        return int(self.samples.shape[0])

    @property
    def dim(self) -> int:
        return int(self.samples.shape[1])


def _prox_map(cfg: SamplerConfig, c: Composite):
    source = cfg.prox_source
    if isinstance(source, ProxNetParams):
        if source.dim != c.dim:
            raise DomainError(f"Network dimension {source.dim} != potential dimension {c.dim}")
        return resolve_prox(c, as_prox_map(source))
    return resolve_prox(c, source)


def _initial(cfg: SamplerConfig, streams: ChainStreams, dim: int, scale: float) -> np.ndarray:
    draws = streams.normal(1, dim)[0]
    if cfg.init is not None:
        init = np.asarray(cfg.init, dtype=float)
        full = np.broadcast_to(init, (cfg.chains, dim)) if init.ndim < 2 else init
        return np.array(full[streams.indices], dtype=float)
    return scale * draws


def _check_finite(x: np.ndarray, step: int, kind: str) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"{kind}: non-finite state at step {step}", step=step)


def _sharded(cfg: SamplerConfig, runner: Callable[[ChainStreams], Tuple[np.ndarray, Optional[np.ndarray], Dict[str, Any]]]):
    streams = ChainStreams(cfg.seed, cfg.chains)
    if cfg.workers == 1 or cfg.chains < 2 * cfg.workers:
        return runner(streams)
    shards = np.array_split(np.arange(cfg.chains), cfg.workers)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        parts = list(pool.map(lambda idx: runner(streams.subset(idx)), shards))
    samples = np.concatenate([p[0] for p in parts], axis=0)
    traj = None
    if parts[0][1] is not None:
        traj = np.concatenate([p[1] for p in parts], axis=1)
    meta: Dict[str, Any] = {}
    for p in parts:
        for key, value in p[2].items():
            meta[key] = meta.get(key, 0) + value if isinstance(value, (int, float)) else value
    return samples, traj, meta


def _batch(cfg: SamplerConfig, c: Composite, samples, traj, meta, steps: int) -> SampleBatch:
    metadata = {
        'kind': cfg.kind,
        'chains': cfg.chains,
        'dim': c.dim,
        'prox_source': cfg.prox_label,
        'schedule': cfg.schedule.describe(),
        'noise': cfg.noise,
    }
    metadata.update(meta)
    return SampleBatch(samples=samples, sampler=cfg.kind, seed=cfg.seed, steps=steps,
                       metadata=metadata, trajectory=traj)


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def pgm_step(x: np.ndarray, alphas: Tuple[float, float, float], prox_value: np.ndarray,
             noise: Optional[np.ndarray]) -> np.ndarray:
    """x' = alpha1 x + alpha2 P + alpha3 xi."""
    a1, a2, a3 = alphas
    out = a1 * x + a2 * prox_value
    if noise is not None:
        out = out + a3 * noise
    return out


def pgm_sample(cfg: SamplerConfig, c: Composite,
               coefficient_fn=pgm_coefficients) -> SampleBatch:
    """
    Exponential-interpolation sampler.

    Starts from N(0, sigma^2(T) I) (or cfg.init) and iterates
    x_{k+1} = a1 x_k + a2 P_k + a3 xi_k for k = 0..K-1, where
    P_k approximates Prox_U^{lambda(tau_k)}(x_k / mu(tau_k)). The returned
    sample is the noise-free landing x_{K+1} = mu(0) P_K; with K = 0 the
    initialization is returned unchanged.

    Raises:
        DivergenceError: If the state becomes non-finite
    """
    s = cfg.schedule
    d = c.dim
    prox_map = _prox_map(cfg, c)
    coeffs = coefficient_table(s, coefficient_fn)
    noisy = cfg.noise and cfg.kind != 'prox_point_ode'

    def run(streams: ChainStreams):
        x = _initial(cfg, streams, d, np.sqrt(float(s.sigma2(s.T))))
        traj = [x.copy()] if cfg.store_trajectory else None
        steps = noise_blocks(streams, s.K, d) if noisy else None
        for k in range(s.K):
            tau = s.tau(k)
            mu, lam = float(s.mu(tau)), float(s.lam(tau))
            p = prox_map(x / mu, lam)
            x = pgm_step(x, tuple(coeffs[k]), p, next(steps) if noisy else None)
            _check_finite(x, k, cfg.kind)
            if traj is not None:
                traj.append(x.copy())
        if s.K > 0:
            tau = s.tau(s.K)
            x = float(s.mu(0.0)) * prox_map(x / float(s.mu(tau)), float(s.lam(tau)))
            _check_finite(x, s.K, cfg.kind)
            if traj is not None:
                traj.append(x.copy())
        return x, (np.stack(traj) if traj is not None else None), {}

    logger.debug(f"{cfg.kind}: K={s.K}, chains={cfg.chains}, prox={cfg.prox_label}")
    samples, traj, meta = _sharded(cfg, run)
    return _batch(cfg, c, samples, traj, meta, s.K)


def prox_point_ode(cfg: SamplerConfig, c: Composite) -> SampleBatch:
    """Noise-free PGM recursion x_{k+1} = a1 x_k + a2 P_k; a MAP-like endpoint."""
    if cfg.kind != 'prox_point_ode':
        cfg = replace(cfg, kind='prox_point_ode')
    return pgm_sample(cfg, c)


# ---------------------------------------------------------------------------
# Euler-Maruyama
# ---------------------------------------------------------------------------

def em_step(x: np.ndarray, gamma: float, drift: float, b2: float, sigma2: float, mu: float,
            prox_value: np.ndarray, noise: Optional[np.ndarray], flow: bool = False) -> np.ndarray:
    """
    One reverse Euler-Maruyama step with the Moreau score (mu P - x) / sigma^2.

    SDE: x' = (1 - g a - g b^2/s^2) x + g b^2 mu / s^2 P + sqrt(g) b xi.
    Flow: the score term is halved and there is no noise.
    """
    weight = 0.5 if flow else 1.0
    ratio = weight * gamma * b2 / sigma2
    out = (1.0 - gamma * drift - ratio) * x + ratio * mu * prox_value
    if noise is not None and not flow:
        out = out + np.sqrt(gamma * b2) * noise
    return out


def em_sample(cfg: SamplerConfig, c: Composite) -> SampleBatch:
    """
    Euler-Maruyama discretization of the Moreau-score reverse SDE.

    Steps with gamma b^2 / sigma^2 >= 1 overshoot; they are counted in the
    metadata and logged.
    """
    s = cfg.schedule
    d = c.dim
    prox_map = _prox_map(cfg, c)
    noisy = cfg.noise and not cfg.flow
    overshoot = []
    for k in range(s.K):
        tau = s.tau(k)
        gamma = float(s.grid[k + 1] - s.grid[k])
        if gamma * float(s.diffusion2(tau)) / float(s.sigma2(tau)) >= 1.0:
            overshoot.append(k)
    if overshoot:
        logger.warning(f"pgm_em: {len(overshoot)} steps violate gamma b^2 / sigma^2 < 1 (first at k={overshoot[0]})")

    def run(streams: ChainStreams):
        x = _initial(cfg, streams, d, np.sqrt(float(s.sigma2(s.T))))
        traj = [x.copy()] if cfg.store_trajectory else None
        steps = noise_blocks(streams, s.K, d) if noisy else None
        for k in range(s.K):
            tau = s.tau(k)
            gamma = float(s.grid[k + 1] - s.grid[k])
            mu, lam, sigma2 = float(s.mu(tau)), float(s.lam(tau)), float(s.sigma2(tau))
            p = prox_map(x / mu, lam)
            x = em_step(x, gamma, float(s.drift(tau)), float(s.diffusion2(tau)), sigma2, mu, p,
                        next(steps) if noisy else None, flow=cfg.flow)
            _check_finite(x, k, cfg.kind)
            if traj is not None:
                traj.append(x.copy())
        return x, (np.stack(traj) if traj is not None else None), {}

    samples, traj, meta = _sharded(cfg, run)
    meta = dict(meta, overshoot_steps=len(overshoot), flow=cfg.flow)
    return _batch(cfg, c, samples, traj, meta, s.K)


# ---------------------------------------------------------------------------
# P-ULA
# ---------------------------------------------------------------------------

def pula_sample(cfg: SamplerConfig, c: Composite, delta_L: Optional[float] = None,
                lambda_fixed: Optional[float] = None, n_iters: Optional[int] = None) -> SampleBatch:
    """
    Proximal unadjusted Langevin algorithm.

    x_{k+1} = x_k + delta (Prox_U^lam(x_k) - x_k) / lam + sqrt(2 delta) xi_k,
    started from N(0, I) or cfg.init.
    """
    delta = float(delta_L if delta_L is not None else cfg.delta_L or 0.0)
    lam = float(lambda_fixed if lambda_fixed is not None else cfg.lambda_fixed or 0.0)
    iters = int(n_iters if n_iters is not None else (cfg.n_iters if cfg.n_iters is not None else cfg.schedule.K))
    if delta <= 0 or lam <= 0:
        raise DomainError("pula needs positive delta_L and lambda_fixed")
    if iters < 0:
        raise DomainError("n_iters must be nonnegative")
    d = c.dim
    prox_map = _prox_map(cfg, c)

    def run(streams: ChainStreams):
        x = _initial(cfg, streams, d, 1.0)
        traj = [x.copy()] if cfg.store_trajectory else None
        steps = noise_blocks(streams, iters, d) if cfg.noise else None
        for k in range(iters):
            x = x + delta * (prox_map(x, lam) - x) / lam
            if steps is not None:
                x = x + np.sqrt(2.0 * delta) * next(steps)
            _check_finite(x, k, 'pula')
            if traj is not None:
                traj.append(x.copy())
        return x, (np.stack(traj) if traj is not None else None), {}

    samples, traj, meta = _sharded(cfg, run)
    meta = dict(meta, delta_L=delta, lambda_fixed=lam, n_iters=iters)
    return _batch(cfg, c, samples, traj, meta, iters)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def _stein_score(c: Composite, s: Schedule, tau: float, x: np.ndarray, grid_size: int) -> np.ndarray:
    if c.dim == 1:
        xs = x[:, 0]
        sd = np.sqrt(float(s.sigma2(tau)))
        lo, hi = float(xs.min()) - sd, float(xs.max()) + sd
        grid = np.linspace(lo, hi, grid_size)
        table = score_table_1d(c, s, tau, grid)
        return np.interp(xs, grid, table)[:, None]
    if c.dim == 2:
        return np.stack([true_score_quadrature(c, s, tau, row, panels=128) for row in x])
    raise OracleError(f"Stein score by quadrature supports d <= 2, got {c.dim}")


def baseline_sample(cfg: SamplerConfig, c: Composite) -> SampleBatch:
    """
    Reverse SDE with the quadrature Stein score, stopped early at tau = early_stop * T.

    projected_diffusion additionally projects every iterate onto dom(g).
    The Stein score table spans the current chain range, so this runs as a
    single shard regardless of cfg.workers.
    """
    if cfg.kind not in BASELINE_KINDS:
        raise DomainError(f"{cfg.kind} is not a baseline sampler")
    s = cfg.schedule
    d = c.dim
    stop = cfg.early_stop * s.T
    grid = uniform_grid(s.T, s.K, stop)
    project = cfg.kind == 'projected_diffusion'
    streams = ChainStreams(cfg.seed, cfg.chains)
    x = _initial(cfg, streams, d, np.sqrt(float(s.sigma2(s.T))))
    traj = [x.copy()] if cfg.store_trajectory else None
    steps = noise_blocks(streams, s.K, d) if cfg.noise else None
    overshoot = 0
    for k in range(s.K):
        tau = s.T - float(grid[k])
        gamma = float(grid[k + 1] - grid[k])
        b2, sigma2 = float(s.diffusion2(tau)), float(s.sigma2(tau))
        if gamma * b2 / sigma2 >= 1.0:
            overshoot += 1
        score = _stein_score(c, s, tau, x, cfg.score_grid)
        x = x + gamma * (-float(s.drift(tau)) * x + b2 * score)
        if steps is not None:
            x = x + np.sqrt(gamma * b2) * next(steps)
        if project:
            x = c.g.prox(x, 1.0) if c.g.is_compact else x
        _check_finite(x, k, cfg.kind)
        if traj is not None:
            traj.append(x.copy())
    if overshoot:
        logger.warning(f"{cfg.kind}: {overshoot} steps violate gamma b^2 / sigma^2 < 1")
    meta = {'early_stop': stop, 'overshoot_steps': overshoot, 'score': 'quadrature'}
    return _batch(cfg, c, x, np.stack(traj) if traj is not None else None, meta, s.K)


def run_sampler(cfg: SamplerConfig, c: Composite) -> SampleBatch:
    """Dispatch on cfg.kind."""
    if cfg.kind == 'pgm':
        return pgm_sample(cfg, c)
    if cfg.kind == 'pgm_em':
        return em_sample(cfg, c)
    if cfg.kind == 'pula':
        return pula_sample(cfg, c)
    if cfg.kind == 'prox_point_ode':
        return prox_point_ode(cfg, c)
    return baseline_sample(cfg, c)


def sampler_config_from_dict(cfg: Dict[str, Any], schedule: Schedule,
                             prox_source: Any = None) -> SamplerConfig:
    """
    Build a SamplerConfig from JSON settings.

    Recognized keys: kind, chains, seed, prox ('analytic' | 'joint_exact' | 'learned'),
    noise, init, store_trajectory, workers, flow, delta_L, lambda_fixed, n_iters,
    early_stop, score_grid.
    """
    prox = prox_source if prox_source is not None else cfg.get('prox', 'analytic')
    if prox == 'learned':
        raise DomainError("prox 'learned' needs trained parameters (set 'params' to a parameter file)")
    init = cfg.get('init')
    return SamplerConfig(
        kind=cfg.get('kind', 'pgm'),
        schedule=schedule,
        chains=int(cfg.get('chains', 1000)),
        seed=int(cfg.get('seed', 0)),
        prox_source=prox,
        noise=bool(cfg.get('noise', True)),
        init=None if init is None else np.asarray(init, dtype=float),
        store_trajectory=bool(cfg.get('store_trajectory', False)),
        workers=int(cfg.get('workers', 1)),
        flow=bool(cfg.get('flow', False)),
        delta_L=cfg.get('delta_L'),
        lambda_fixed=cfg.get('lambda_fixed'),
        n_iters=cfg.get('n_iters'),
        early_stop=float(cfg.get('early_stop', 0.2)),
        score_grid=int(cfg.get('score_grid', 801)),
    )
