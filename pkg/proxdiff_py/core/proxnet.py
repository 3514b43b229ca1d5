"""
Learned proximal operator phi_theta(x, lambda).

A numpy multilayer perceptron with layer widths [d+1, h, h, d], tanh hidden
units, a normalized log(lambda) input channel and an optional residual skip
(output = x + correction). It is trained by Moreau score matching: minimize
the annealed kernel loss 1 - N(phi(x_t, lambda) - x0; 0, zeta^2 I) over prior
draws x0 ~ exp(-g) and x_t = x0 + sqrt(lambda) xi.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, DomainError, ShapeError, TrainingError
from .potentials import Ball, Interval, L1, ProxFriendly, Quadratic, prox_friendly_from_dict
from .schedules import Schedule, T_MIN_FRACTION

logger = logging.getLogger("proxdiff.proxnet")

FORMAT_VERSION = 1

PriorSampler = Callable[[np.random.Generator, int], np.ndarray]

OPTIMIZERS = ('adam', 'sgd')
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ProxNetParams:
    """
    Network weights.

    weights[i] has shape (fan_in, fan_out) so a batch X of shape (n, fan_in)
    maps to X @ W + b. log(lambda) enters as (log(lambda) - shift) / scale.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    skip: bool = True
    activation: str = 'tanh'
    lambda_shift: float = 0.0
    lambda_scale: float = 1.0

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be nonempty and of equal length")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError(f"Layer {i}: weight {W.shape} does not match bias {b.shape}")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeError(f"Layer {i} input {W.shape[0]} != previous output {self.weights[i - 1].shape[1]}")
        if self.weights[0].shape[0] != self.weights[-1].shape[1] + 1:
            raise ShapeError("First layer must take d + 1 inputs for d outputs")
        if self.activation != 'tanh':
            raise DomainError(f"Unsupported activation: {self.activation}")
        if self.lambda_scale <= 0:
            raise DomainError("lambda_scale must be positive")

    @property
    def dim(self) -> int:
        return int(self.weights[-1].shape[1])

    @property
    def hidden(self) -> int:
        return int(self.weights[0].shape[1])

    def flat(self) -> np.ndarray:
        """All parameters as one vector (weights then bias, layer by layer)."""
        return np.concatenate([np.concatenate([W.ravel(), b.ravel()])
                               for W, b in zip(self.weights, self.biases)])

    def with_flat(self, theta: np.ndarray) -> 'ProxNetParams':
        weights, biases, i = [], [], 0
        for W, b in zip(self.weights, self.biases):
            weights.append(theta[i:i + W.size].reshape(W.shape))
            i += W.size
            biases.append(theta[i:i + b.size].reshape(b.shape))
            i += b.size
        if i != theta.size:
            raise ShapeError(f"Expected {i} parameters, got {theta.size}")
        return replace(self, weights=tuple(weights), biases=tuple(biases))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))


@dataclass(frozen=True)
class TrainConfig:
    """
    Moreau score matching hyperparameters.

    zeta anneals geometrically from zeta_max to zeta_min over the epochs;
    zeta_min defaults to 0.05 sqrt(d). Each epoch takes steps_per_epoch
    optimizer steps on fresh minibatches. The learning rate follows a cosine
    from learning_rate down to lr_min over all steps. ``momentum`` is the
    first-moment decay for adam and the heavy-ball weight for sgd.
    """

    epochs: int = 2000
    batch_size: int = 256
    learning_rate: float = 3e-3
    lr_min: float = 1e-5
    optimizer: str = 'adam'
    momentum: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    hidden: int = 64
    zeta_max: float = 1.0
    zeta_min: Optional[float] = None
    steps_per_epoch: int = 8
    skip: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.steps_per_epoch < 1:
            raise DomainError("epochs must be >= 0, batch_size and steps_per_epoch >= 1")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1:
            raise DomainError("learning_rate must be positive and momentum in [0, 1)")
        if not 0 <= self.lr_min <= self.learning_rate:
            raise DomainError("lr_min must lie in [0, learning_rate]")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"Unknown optimizer: {self.optimizer}")
        if not 0 <= self.beta2 < 1:
            raise DomainError("beta2 must lie in [0, 1)")
        if self.zeta_max <= 0 or (self.zeta_min is not None and self.zeta_min <= 0):
            raise DomainError("zeta must be strictly positive")
        if self.zeta_min is not None and self.zeta_min > self.zeta_max:
            raise DomainError("zeta_min must not exceed zeta_max")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def lr(self, step: int) -> float:
        """Cosine-annealed learning rate at a global step."""
        total = self.total_steps
        if total <= 1:
            return float(self.learning_rate)
        frac = min(max(step / (total - 1), 0.0), 1.0)
        return float(self.lr_min + 0.5 * (self.learning_rate - self.lr_min) * (1.0 + np.cos(np.pi * frac)))

    def zeta_floor(self, dim: int) -> float:
        floor = self.zeta_min if self.zeta_min is not None else 0.05 * np.sqrt(dim)
        return float(min(floor, self.zeta_max))

    def zeta(self, epoch: int, dim: int) -> float:
        """Annealed kernel width for an epoch; nonincreasing, bounded below by the floor."""
        floor = self.zeta_floor(dim)
        if self.epochs <= 1:
            return float(self.zeta_max)
        frac = min(max(epoch / (self.epochs - 1), 0.0), 1.0)
        return float(self.zeta_max * (floor / self.zeta_max) ** frac)


def train_config_from_dict(cfg: Dict[str, Any]) -> TrainConfig:
    known = {f for f in TrainConfig.__dataclass_fields__}
    unknown = set(cfg) - known
    if unknown:
        raise DomainError(f"Unknown train settings: {', '.join(sorted(unknown))}")
    return TrainConfig(**cfg)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

def init_params(dim: int, hidden: int = 64, seed: int = 0, skip: bool = True,
                lambda_shift: float = 0.0, lambda_scale: float = 1.0) -> ProxNetParams:
    """
    Random hidden layers (variance 1/fan_in) and a zero output layer.

    With skip the initial network is the identity in x; without it the
    output is identically zero.
    """
    if dim < 1 or hidden < 1:
        raise DomainError("dim and hidden must be positive")
    rng = np.random.default_rng(seed)
    widths = [dim + 1, hidden, hidden, dim]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        if i == len(widths) - 2:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            weights.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return ProxNetParams(tuple(weights), tuple(biases), skip=skip,
                         lambda_shift=float(lambda_shift), lambda_scale=float(lambda_scale))


def _inputs(p: ProxNetParams, x: Any, lam: Any) -> Tuple[np.ndarray, np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if arr.ndim == 0 or arr.ndim > 2 or arr.shape[-1] != p.dim:
        raise ShapeError(f"Expected input of dimension {p.dim}, got shape {arr.shape}")
    X = np.atleast_2d(arr)
    lam_arr = np.broadcast_to(np.asarray(lam, dtype=float), (X.shape[0],))
    if np.any(~(lam_arr > 0)):
        raise DomainError("lambda must be positive")
    enc = (np.log(lam_arr) - p.lambda_shift) / p.lambda_scale
    return X, np.concatenate([X, enc[:, None]], axis=1), single


def _forward_cache(p: ProxNetParams, X: np.ndarray, Z0: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    acts = [Z0]
    h = Z0
    last = len(p.weights) - 1
    for i, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ W + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    out = acts[-1] + X if p.skip else acts[-1]
    return out, acts


def forward(p: ProxNetParams, x: Any, lam: Any) -> np.ndarray:
    """
    Evaluate phi_theta(x, lambda).

    Args:
        p: Network parameters
        x: Point (d,) or batch (n, d)
        lam: Positive scalar or per-row array

    Returns:
        Array with the same shape as x

    Raises:
        ShapeError: If x does not have dimension d
        DomainError: If lambda is not positive
    """
    X, Z0, single = _inputs(p, x, lam)
    out, _ = _forward_cache(p, X, Z0)
    return out[0] if single else out


def _backward(p: ProxNetParams, acts: List[np.ndarray], grad_out: np.ndarray) -> ProxNetParams:
    grads_W: List[np.ndarray] = [None] * len(p.weights)
    grads_b: List[np.ndarray] = [None] * len(p.weights)
    delta = grad_out
    for i in range(len(p.weights) - 1, -1, -1):
        grads_W[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ p.weights[i].T) * (1.0 - acts[i] ** 2)
    return replace(p, weights=tuple(grads_W), biases=tuple(grads_b))


def kernel_normalizer(zeta: float, dim: int) -> float:
    """(2 pi zeta^2)^{-d/2}."""
    return float((2.0 * np.pi * zeta * zeta) ** (-0.5 * dim))


def matching_loss(p: ProxNetParams, batch: Tuple[np.ndarray, np.ndarray, np.ndarray],
                  zeta: float) -> Tuple[float, ProxNetParams]:
    """
    Moreau score matching loss and its exact parameter gradient.

    Args:
        p: Network parameters
        batch: Tuple (x0, x_t, lam) with shapes (n, d), (n, d), (n,)
        zeta: Kernel width

    Returns:
        Tuple of (mean of 1 - (2 pi zeta^2)^{-d/2} exp(-|phi - x0|^2 / (2 zeta^2)),
        gradient with the same structure as p)

    Raises:
        DomainError: If zeta <= 0 or the batch is empty
    """
    if not zeta > 0:
        raise DomainError(f"zeta must be positive, got {zeta}")
    x0, xt, lam = batch
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if x0.shape[0] == 0:
        raise DomainError("Empty batch")
    X, Z0, _ = _inputs(p, np.atleast_2d(xt), lam)
    if x0.shape != X.shape:
        raise ShapeError(f"x0 shape {x0.shape} != x_t shape {X.shape}")
    out, acts = _forward_cache(p, X, Z0)
    n, d = X.shape
    resid = out - x0
    kern = kernel_normalizer(zeta, d) * np.exp(-np.sum(resid * resid, axis=1) / (2.0 * zeta * zeta))
    loss = float(np.mean(1.0 - kern))
    grad_out = (kern / (n * zeta * zeta))[:, None] * resid
    return loss, _backward(p, acts, grad_out)


def lipschitz_bound(p: ProxNetParams) -> float:
    """Upper bound on the Lipschitz constant in x: product of spectral norms (+1 with skip)."""
    norms = [np.linalg.norm(p.weights[0][:p.dim], 2)]
    norms += [np.linalg.norm(W, 2) for W in p.weights[1:]]
    return float(np.prod(norms) + (1.0 if p.skip else 0.0))


EVAL_LAMBDAS = (float(np.exp(-8.0)), float(np.exp(-4.0)), float(np.exp(-1.0)))


def prox_error(p: ProxNetParams, g: ProxFriendly, lams: Tuple[float, ...] = EVAL_LAMBDAS,
               lo: float = -3.0, hi: float = 3.0, points: int = 121) -> float:
    """
    Mean absolute deviation of the network from the analytic prox of g.

    Evaluated on a regular grid of [lo, hi]^d (``points`` per axis in 1D,
    41 per axis in 2D) for every lambda in ``lams``.
    """
    d = p.dim
    if d != g.dim:
        raise ShapeError(f"Network dimension {d} != prior dimension {g.dim}")
    axis = np.linspace(lo, hi, points if d == 1 else 41)
    xs = np.stack(np.meshgrid(*([axis] * d), indexing='ij'), axis=-1).reshape(-1, d)
    errors = [np.mean(np.abs(forward(p, xs, lam) - g.prox(xs, lam))) for lam in lams]
    return float(np.mean(errors))


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

def rejection_sampler(g: ProxFriendly, max_rounds: int = 1000) -> PriorSampler:
    """Uniform draws on dom(g) by rejection from its bounding box."""
    box = g.bounding_box()
    if box is None:
        raise DomainError(f"Rejection sampling needs a bounded domain, got {g.kind}")
    lo, hi = box

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        accepted = []
        have = 0
        for _ in range(max_rounds):
            draws = rng.uniform(lo, hi, size=(max(n, 16), g.dim))
            keep = draws[np.atleast_1d(g.contains(draws))]
            accepted.append(keep)
            have += keep.shape[0]
            if have >= n:
                return np.concatenate(accepted)[:n]
        raise DomainError(f"Rejection sampling for {g.kind} accepted only {have} of {n}")

    return sample


def prior_sampler_for(g: ProxFriendly) -> PriorSampler:
    """
    Sampler for the prior exp(-g).

    Indicators are uniform on their domain, l1 gives independent Laplace
    components and a quadratic gives the matching Gaussian.
    """
    if isinstance(g, (Interval, Ball)):
        return rejection_sampler(g)
    if isinstance(g, L1):
        if g.weight <= 0:
            raise DomainError("exp(-g) is improper for a zero l1 weight")
        scale = 1.0 / g.weight
        return lambda rng, n: rng.laplace(0.0, scale, size=(n, g.dim))
    if isinstance(g, Quadratic):
        if g.m <= 0:
            raise DomainError("exp(-g) is improper for a singular quadratic")
        cov = np.linalg.inv(g.A)
        mean = -cov @ g.b
        chol = np.linalg.cholesky(cov)
        return lambda rng, n: mean + rng.standard_normal((n, g.dim)) @ chol.T
    raise DomainError(f"No prior sampler for g of kind {g.kind}")


def prior_from_dict(cfg: Dict[str, Any]) -> Tuple[ProxFriendly, PriorSampler]:
    """
    Prior g and its sampler from a JSON section such as
    {"kind": "interval", "lo": -1, "hi": 1} or {"kind": "ball", "r": 1, "dim": 2}.
    """
    g = prox_friendly_from_dict(cfg)
    return g, prior_sampler_for(g)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _time_range(s: Schedule) -> Tuple[float, float]:
    lo = 0.0 if float(s.lam(0.0)) > 0.0 else max(s.t_min, T_MIN_FRACTION * s.T)
    return lo, s.T


def lambda_encoding(s: Schedule) -> Tuple[float, float]:
    """Shift and scale mapping log(lambda) over the training times to about [-1, 1]."""
    lo, hi = _time_range(s)
    log_lo, log_hi = np.log(float(s.lam(lo))), np.log(float(s.lam(hi)))
    shift = 0.5 * (log_lo + log_hi)
    scale = max(0.5 * (log_hi - log_lo), 1.0)
    return float(shift), float(scale)


def train(cfg: TrainConfig, prior_sampler: PriorSampler, s: Schedule,
          dim: Optional[int] = None, init: Optional[ProxNetParams] = None,
          history: Optional[List[Dict[str, float]]] = None) -> ProxNetParams:
    """
    Moreau score matching with Adam (or SGD with momentum) under a cosine
    learning rate.

    Each step draws x0 from the prior, t uniform on the schedule's time range,
    x_t = x0 + sqrt(lambda(t)) xi and descends on matching_loss with the
    epoch's zeta. The gradient is scaled by (2 pi)^{d/2} zeta^{d+2} so that
    the kernel normalizer does not blow the update up as zeta anneals.

    Args:
        cfg: Training configuration
        prior_sampler: (rng, n) -> (n, d) draws from exp(-g)
        s: Schedule providing lambda(t)
        dim: Dimension d (inferred from init or a trial draw when omitted)
        init: Starting parameters; defaults to init_params(dim, cfg.hidden, cfg.seed)
        history: Optional list receiving {epoch, zeta, lr, loss} per epoch

    Returns:
        Trained parameters

    Raises:
        TrainingError: If the loss becomes non-finite
    """
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        if dim is None:
            dim = int(np.atleast_2d(prior_sampler(np.random.default_rng(cfg.seed), 1)).shape[1])
        shift, scale = lambda_encoding(s)
        init = init_params(dim, cfg.hidden, cfg.seed, skip=cfg.skip, lambda_shift=shift, lambda_scale=scale)
    params = init
    d = params.dim
    t_lo, t_hi = _time_range(s)
    theta = params.flat()
    first = np.zeros_like(theta)
    second = np.zeros_like(theta)
    step_count = 0
    logger.info(f"Training proximal network: d={d}, epochs={cfg.epochs}, batch={cfg.batch_size}, "
                f"optimizer={cfg.optimizer}")

    for epoch in range(cfg.epochs):
        zeta = cfg.zeta(epoch, d)
        grad_scale = (2.0 * np.pi) ** (0.5 * d) * zeta ** (d + 2)
        epoch_loss = 0.0
        for _ in range(cfg.steps_per_epoch):
            x0 = np.atleast_2d(prior_sampler(rng, cfg.batch_size))
            t = rng.uniform(t_lo, t_hi, size=cfg.batch_size)
            lam = np.asarray(s.lam(t), dtype=float)
            xt = x0 + np.sqrt(lam)[:, None] * rng.standard_normal(x0.shape)
            loss, grad = matching_loss(params, (x0, xt, lam), zeta)
            if not np.isfinite(loss):
                raise TrainingError(f"Non-finite matching loss at epoch {epoch}", epoch=epoch, checkpoint=params)
            g = grad_scale * grad.flat()
            lr = cfg.lr(step_count)
            step_count += 1
            if cfg.optimizer == 'adam':
                first = cfg.momentum * first + (1.0 - cfg.momentum) * g
                second = cfg.beta2 * second + (1.0 - cfg.beta2) * g * g
                m_hat = first / (1.0 - cfg.momentum ** step_count)
                v_hat = second / (1.0 - cfg.beta2 ** step_count)
                candidate = theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            else:
                first = cfg.momentum * first - lr * g
                candidate = theta + first
            if not np.all(np.isfinite(candidate)):
                raise TrainingError(f"Non-finite parameters at epoch {epoch}", epoch=epoch, checkpoint=params)
            theta = candidate
            params = params.with_flat(theta)
            epoch_loss += loss
        epoch_loss /= cfg.steps_per_epoch
        if history is not None:
            history.append({'epoch': epoch, 'zeta': zeta, 'lr': lr, 'loss': epoch_loss})
        if epoch % max(cfg.epochs // 10, 1) == 0:
            logger.debug(f"epoch {epoch}: zeta={zeta:.4f} lr={lr:.2e} loss={epoch_loss:.6f}")

    logger.info("Training finished")
    return params


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def params_to_dict(p: ProxNetParams) -> Dict[str, Any]:
    return {
        'format_version': FORMAT_VERSION,
        'activation': p.activation,
        'skip': p.skip,
        'dim': p.dim,
        'hidden': p.hidden,
        'lambda_encoding': {'kind': 'log', 'shift': p.lambda_shift, 'scale': p.lambda_scale},
        'lipschitz_bound': lipschitz_bound(p),
        'layers': [{'W': W.tolist(), 'b': b.tolist()} for W, b in zip(p.weights, p.biases)],
    }


def params_from_dict(data: Dict[str, Any]) -> ProxNetParams:
    version = data.get('format_version')
    if version != FORMAT_VERSION:
        raise ConfigError(f"Unsupported parameter format version: {version}")
    try:
        enc = data.get('lambda_encoding', {})
        return ProxNetParams(
            weights=tuple(np.asarray(layer['W'], dtype=float) for layer in data['layers']),
            biases=tuple(np.asarray(layer['b'], dtype=float) for layer in data['layers']),
            skip=bool(data.get('skip', True)),
            activation=data.get('activation', 'tanh'),
            lambda_shift=float(enc.get('shift', 0.0)),
            lambda_scale=float(enc.get('scale', 1.0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Invalid parameter file: {e}") from e


def save_params(p: ProxNetParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(params_to_dict(p), f, indent=2)
    return path


def load_params(path: Union[str, Path]) -> ProxNetParams:
    path = Path(path)
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, path=str(path), lineno=e.lineno, colno=e.colno) from e
    except OSError as e:
        raise ConfigError(f"Cannot read parameter file: {e}", path=str(path)) from e
    return params_from_dict(data)


def as_prox_map(p: ProxNetParams) -> Callable[[np.ndarray, float], np.ndarray]:
    """The network as a prox of g: (x, lam) -> phi_theta(x, lam)."""
    return lambda x, lam: forward(p, x, lam)
