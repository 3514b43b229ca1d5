"""
Verification service.

Runs the invariant suites against the brute-force oracles and reports every
check with its measured value and threshold. Failures are report entries,
never exceptions.
"""

from typing import Dict, Any, Callable, List, Optional

import mpmath
import numpy as np
import sympy

from .base_service import BaseService
from ..reports import Reports
from ...core.errors import ProxDiffError
from ...core.oracles import bound_checks, empirical_w1, grid_prox, true_score_quadrature
from ...core.potentials import (
    Ball, Composite, Interval, L1, Quadratic, Zero, moreau_envelope, moreau_score, prox, quadratic_smooth,
    split_prox, splitting_bound, zero_smooth,
)
from ...core.proxnet import init_params, matching_loss
from ...core.schedules import pgm_coefficients, ve_schedule, vp_schedule
from ...utils.expressions import T_SYMBOL

CoefficientFn = Callable[..., Any]


def _entry(suite: str, name: str, passed: bool, measured: Any = None, threshold: Any = None,
           note: Optional[str] = None) -> Dict[str, Any]:
    entry = {'suite': suite, 'name': name, 'passed': bool(passed), 'measured': measured, 'threshold': threshold}
    if note:
        entry['note'] = note
    return entry


def _schedules():
    return [
        ('ve', ve_schedule("exp(10t-8)", T=1.0, K=100)),
        ('vp', vp_schedule(0.1, 20.0, T=1.0, K=100)),
    ]


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

def check_reconstruction() -> List[Dict[str, Any]]:
    entries = []
    for name, s in _schedules():
        t = s.T - s.grid
        sigma2 = np.asarray(s.sigma2(t), dtype=float)
        resid = np.abs(sigma2 - np.asarray(s.mu(t)) ** 2 * np.asarray(s.lam(t)))
        worst = float(np.max(resid / (1.0 + sigma2)))
        entries.append(_entry('schedules', f"reconstruction/{name}", worst <= 1e-12, worst, 1e-12))
    return entries


def check_coefficients(coefficient_fn: CoefficientFn = pgm_coefficients) -> List[Dict[str, Any]]:
    """Sign constraints and the alpha3^2 identity on every step of the reference schedules."""
    entries = []
    for name, s in _schedules():
        worst = 0.0
        signs_ok = True
        for k in range(s.K):
            a1, a2, a3 = coefficient_fn(s, k)
            mu1, lam0, lam1 = float(s.mu(s.tau(k + 1))), float(s.lam(s.tau(k))), float(s.lam(s.tau(k + 1)))
            expected = mu1 * mu1 * lam1 * (1.0 - lam1 / lam0)
            worst = max(worst, abs(a3 * a3 - expected) / max(abs(expected), 1e-300))
            signs_ok = signs_ok and a1 >= 0 and a1 <= 1 + 1e-12 and a2 >= 0 and a3 >= 0
        entries.append(_entry('coefficients', f"alpha3-identity/{name}", worst <= 1e-12, worst, 1e-12))
        entries.append(_entry('coefficients', f"signs/{name}", signs_ok))
    return entries


def check_coefficients_high_precision(coefficient_fn: CoefficientFn = pgm_coefficients) -> List[Dict[str, Any]]:
    """Re-evaluate the VE coefficients with 50-digit arithmetic."""
    s = ve_schedule("exp(10t-8)", T=1.0, K=100)
    lam = sympy.lambdify(T_SYMBOL, s.lambda_fn.expr, modules='mpmath')
    worst = 0.0
    with mpmath.workdps(50):
        for k in (0, 1, s.K // 2, s.K - 1):
            tau0, tau1 = mpmath.mpf(s.tau(k)), mpmath.mpf(s.tau(k + 1))
            rho = lam(tau1) / lam(tau0)
            reference = (rho, 1 - rho, mpmath.sqrt(lam(tau1)) * mpmath.sqrt(1 - rho))
            got = coefficient_fn(s, k)
            for g, r in zip(got, reference):
                worst = max(worst, float(abs(mpmath.mpf(g) - r) / max(abs(r), mpmath.mpf('1e-300'))))
    return [_entry('coefficients', 'high-precision/ve', worst <= 1e-12, worst, 1e-12)]


def check_pula_reduction(coefficient_fn: CoefficientFn = pgm_coefficients) -> List[Dict[str, Any]]:
    """With mu == 1 the PGM weights are (rho, 1 - rho)."""
    s = ve_schedule("exp(10t-8)", T=1.0, K=100)
    worst = 0.0
    for k in range(s.K):
        a1, a2, _ = coefficient_fn(s, k)
        rho = float(s.lam(s.tau(k + 1))) / float(s.lam(s.tau(k)))
        worst = max(worst, abs(a1 - rho), abs(a2 - (1.0 - rho)))
    return [_entry('coefficients', 'pula-reduction/ve', worst <= 1e-15, worst, 1e-15)]


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------

def _prox_kinds():
    return [
        Interval(-1.0, 1.0, dim=1),
        Ball(1.0, dim=2),
        L1(1.0, dim=2),
        Quadratic([[2.0, 0.5], [0.5, 1.0]], [0.3, -0.2]),
        Zero(1),
    ]


def check_nonexpansive(seed: int = 0, pairs: int = 500) -> List[Dict[str, Any]]:
    rng = np.random.default_rng(seed)
    entries = []
    for g in _prox_kinds():
        x = 3.0 * rng.standard_normal((pairs, g.dim))
        y = 3.0 * rng.standard_normal((pairs, g.dim))
        lam = rng.uniform(0.01, 2.0)
        px, py = prox(g, lam, x), prox(g, lam, y)
        ratio = float(np.max(np.linalg.norm(px - py, axis=1) / np.linalg.norm(x - y, axis=1)))
        inside = bool(np.all(g.contains(px)))
        entries.append(_entry('potentials', f"nonexpansive/{g.kind}", ratio <= 1.0 + 1e-12, ratio, 1.0))
        entries.append(_entry('potentials', f"prox-in-domain/{g.kind}", inside))
    return entries


def check_envelope_gradient(seed: int = 0, points: int = 100) -> List[Dict[str, Any]]:
    """Central differences of the Moreau envelope against (x - prox) / lambda."""
    rng = np.random.default_rng(seed)
    entries = []
    for g in _prox_kinds():
        worst = 0.0
        for _ in range(points):
            x = 3.0 * rng.standard_normal(g.dim)
            lam = rng.uniform(0.1, 2.0)
            grad = (x - prox(g, lam, x)) / lam
            h = 1e-6 * max(1.0, float(np.max(np.abs(x))))
            fd = np.array([
                (moreau_envelope(g, lam, x + h * e) - moreau_envelope(g, lam, x - h * e)) / (2.0 * h)
                for e in np.eye(g.dim)
            ])
            worst = max(worst, float(np.max(np.abs(fd - grad)) / (1.0 + np.max(np.abs(grad)))))
        entries.append(_entry('potentials', f"envelope-gradient/{g.kind}", worst <= 1e-5, worst, 1e-5))
    return entries


def _quadratic_targets():
    return [
        ('1d-f-and-g', Composite(quadratic_smooth([[1.0]], [0.5]), Quadratic([[0.5]], [0.0]), beta=2.0)),
        ('1d-g-only', Composite(zero_smooth(1), Quadratic([[1.0]], [0.0]), beta=0.0)),
        ('2d-f-only', Composite(quadratic_smooth([[1.0, 0.3], [0.3, 2.0]], [0.2, -0.4]), Zero(2), beta=1.0)),
    ]


def check_quadratic_equivalence(times=(0.1, 0.3, 0.5, 0.7, 0.9)) -> List[Dict[str, Any]]:
    """For quadratic U the Moreau score is the exact score of pi_t."""
    s = ve_schedule("exp(10t-8)", T=1.0, K=100)
    entries = []
    for name, c in _quadratic_targets():
        worst = 0.0
        for t in times:
            x_t = np.full(c.dim, 0.7)
            exact = moreau_score(c, s, t, x_t, source='joint_exact')
            true = true_score_quadrature(c, s, t, x_t)
            worst = max(worst, float(np.max(np.abs(exact - true))))
        entries.append(_entry('potentials', f"quadratic-equivalence/{name}", worst <= 1e-6, worst, 1e-6))
    return entries


def check_splitting_bound(seed: int = 0, points: int = 1000) -> List[Dict[str, Any]]:
    """
    Joint vs split prox under beta >= 2, lambda = (2 beta^{3/2} L)^{-1}; the
    discrepancy must sit below the bound and decay like 1/beta.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3.0, 3.0, size=(points, 1))
    betas = (2.0, 8.0, 32.0, 128.0)
    worst_ratio = 0.0
    gaps = []
    for beta in betas:
        c = Composite(quadratic_smooth([[1.0]], [0.0]), Quadratic([[0.5]], [0.0]), beta=beta)
        lam = 1.0 / (2.0 * beta ** 1.5 * c.f.L)
        diff = np.linalg.norm(c.exact_prox(x, lam) - split_prox(c, lam, x), axis=1)
        worst_ratio = max(worst_ratio, float(np.max(diff / splitting_bound(c, x))))
        gaps.append(float(np.max(diff)))
    slope = float(np.polyfit(np.log(betas), np.log(gaps), 1)[0])
    entries = [
        _entry('potentials', 'splitting-bound/quadratic', worst_ratio <= 1.0, worst_ratio, 1.0),
        _entry('potentials', 'splitting-decay/quadratic', -1.3 <= slope <= -0.7, slope, [-1.3, -0.7]),
    ]
    c = Composite(quadratic_smooth([[1.0]], [0.0]), Interval(-1.0, 1.0), beta=10.0)
    lam = 0.01
    worst = 0.0
    for xi in np.linspace(-2.0, 2.0, 9):
        joint = grid_prox(c, lam, np.array([xi]))
        split = split_prox(c, lam, np.array([xi]))
        excess = float(np.linalg.norm(joint - split) - splitting_bound(c, np.array([xi])))
        worst = max(worst, excess)
    entries.append(_entry('potentials', 'splitting-bound/interval-grid', worst <= 1e-4, worst, 1e-4))
    return entries


def check_score_gap(betas=(1.0, 10.0, 100.0), lam: float = 0.5) -> List[Dict[str, Any]]:
    """Bound checks on f = x^2/2 over [-1, 1] and the beta^{-1/2} decay of the largest gap."""
    s = ve_schedule(lam, T=1.0, K=10)
    entries = []
    max_gaps = []
    for beta in betas:
        c = Composite(quadratic_smooth([[1.0]], [0.0]), Interval(-1.0, 1.0), beta=beta)
        sweep = [(0.5, np.array([(1.0 + beta * lam) * u])) for u in np.linspace(-1.5, 1.5, 13)]
        report = bound_checks(c, s, sweep)
        max_gaps.append(report['max_gap_exact'])
        entries.append(_entry('bounds', f"score-gap/beta={beta:g}", report['passed'], report['min_margin'], 0.0,
                              note='; '.join(report['notes']) or None))
    expected = np.sqrt(betas[-1] / betas[0])
    ratio = max_gaps[0] / max(max_gaps[-1], 1e-300)
    entries.append(_entry('bounds', 'score-gap-decay', expected / 2.0 <= ratio <= 2.0 * expected,
                          ratio, [expected / 2.0, 2.0 * expected]))
    c = Composite(zero_smooth(1), Zero(1), beta=1.0)
    report = bound_checks(c, s, [(0.5, np.array([0.3]))])
    entries.append(_entry('bounds', 'score-gap/unbounded-domain', report['passed'],
                          note='; '.join(report['notes'])))
    return entries


# ---------------------------------------------------------------------------
# Oracles and network
# ---------------------------------------------------------------------------

def check_w1_axioms(seed: int = 0, trials: int = 20, size: int = 200) -> List[Dict[str, Any]]:
    rng = np.random.default_rng(seed)
    asym = ident = tri = 0.0
    for _ in range(trials):
        a, b, c = (rng.standard_normal(size) * rng.uniform(0.5, 2.0) + rng.uniform(-1, 1) for _ in range(3))
        asym = max(asym, abs(empirical_w1(a, b) - empirical_w1(b, a)))
        ident = max(ident, empirical_w1(a, a))
        tri = max(tri, empirical_w1(a, c) - empirical_w1(a, b) - empirical_w1(b, c))
    return [
        _entry('oracles', 'w1-symmetry', asym <= 1e-12, asym, 1e-12),
        _entry('oracles', 'w1-identity', ident <= 1e-12, ident, 1e-12),
        _entry('oracles', 'w1-triangle', tri <= 1e-12, tri, 1e-12),
    ]


def check_matching_gradient(seed: int = 0, h: float = 1e-5) -> List[Dict[str, Any]]:
    rng = np.random.default_rng(seed)
    p = init_params(1, hidden=8, seed=seed)
    theta = p.flat()
    p = p.with_flat(theta + 0.3 * rng.standard_normal(theta.size))
    x0 = rng.uniform(-1, 1, size=(16, 1))
    lam = np.exp(rng.uniform(-6, 0, size=16))
    xt = x0 + np.sqrt(lam)[:, None] * rng.standard_normal((16, 1))
    batch = (x0, xt, lam)
    _, grad = matching_loss(p, batch, 0.5)
    analytic = grad.flat()
    base = p.flat()
    fd = np.empty_like(base)
    for i in range(base.size):
        step = np.zeros_like(base)
        step[i] = h
        up, _ = matching_loss(p.with_flat(base + step), batch, 0.5)
        down, _ = matching_loss(p.with_flat(base - step), batch, 0.5)
        fd[i] = (up - down) / (2.0 * h)
    rel = float(np.linalg.norm(fd - analytic) / max(np.linalg.norm(analytic), 1e-300))
    return [_entry('proxnet', 'matching-loss-gradient', rel <= 1e-4, rel, 1e-4)]


SUITES = {
    'reconstruction': lambda cfn: check_reconstruction(),
    'coefficients': check_coefficients,
    'high-precision': check_coefficients_high_precision,
    'pula-reduction': check_pula_reduction,
    'nonexpansive': lambda cfn: check_nonexpansive(),
    'envelope-gradient': lambda cfn: check_envelope_gradient(),
    'quadratic-equivalence': lambda cfn: check_quadratic_equivalence(),
    'splitting': lambda cfn: check_splitting_bound(),
    'score-gap': lambda cfn: check_score_gap(),
    'w1-axioms': lambda cfn: check_w1_axioms(),
    'matching-gradient': lambda cfn: check_matching_gradient(),
}


class VerificationService(BaseService):
    """
    Runs the invariant suites.

    Config keys: 'suites' (names, default all) and 'coefficient_fn' (a
    replacement for pgm_coefficients, used to check that a faulty
    implementation is caught).
    """

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        super().__init__("verification", config)
        self.entries: List[Dict[str, Any]] = []

    def get_info(self) -> Dict[str, Any]:
        return {
            'name': 'Verification',
            'description': 'Invariant and bound suites against brute-force oracles',
            'suites': list(SUITES),
        }

    def _run(self) -> Dict[str, Any]:
        names = self.config.get('suites') or list(SUITES)
        coefficient_fn = self.config.get('coefficient_fn', pgm_coefficients)
        entries: List[Dict[str, Any]] = []
        for name in names:
            if name not in SUITES:
                entries.append(_entry(name, 'unknown-suite', False, note=f"no suite named {name}"))
                continue
            self.logger.info(f"suite {name}")
            try:
                entries.extend(SUITES[name](coefficient_fn))
            except (ProxDiffError, ArithmeticError, ValueError) as e:
                self.logger.warning(f"suite {name} raised: {e}")
                entries.append(_entry(name, 'suite-error', False, note=str(e)))
        self.entries = entries
        failed = [e for e in entries if not e['passed']]
        for e in failed:
            self.logger.warning(f"FAILED {e['suite']}/{e['name']}: measured={e['measured']} threshold={e['threshold']}")
        report = {'checks': entries, 'total': len(entries), 'failed': len(failed)}
        if failed:
            return Reports.error_entry(f"{len(failed)} of {len(entries)} checks failed", data=report)
        return Reports.success_entry(report)
