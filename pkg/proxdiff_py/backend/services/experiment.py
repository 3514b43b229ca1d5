"""
Experiment service.

Runs every (sampler, seed) cell of an ExperimentSpec in a worker pool,
writes per-cell samples and a summary, and evaluates the spec's checks.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, Any, List, Optional, Tuple

import numpy as np
from scipy import stats

from .base_service import BaseService
from ..experiments import ExperimentSpec
from ..reports import Reports, report_header, write_csv, write_histogram_csv, write_json, write_samples_csv
from ...core.errors import OracleError, ProxDiffError
from ...core.oracles import (
    composite_minimizer, empirical_w1, gaussian_target, gaussian_w1_1d, histogram, kde_mode,
    linear_gaussian_law, metrics,
)
from ...core.potentials import Composite, potential_from_dict
from ...core.samplers import run_sampler, sampler_config_from_dict
from ...core.schedules import schedule_from_dict

SUMMARY_FIELDS = ['experiment', 'sampler', 'seed', 'success', 'steps', 'chains', 'feasibility',
                  'optimality_gap', 'mode', 'w1', 'w1_exact', 'mean', 'error']


def reference_law(ref: Dict[str, Any]):
    """Frozen scipy law for a reference description."""
    kind = ref.get('kind')
    if kind == 'normal':
        return stats.norm(loc=float(ref.get('loc', 0.0)), scale=float(ref.get('scale', 1.0)))
    if kind == 'truncnorm':
        loc, scale = float(ref.get('loc', 0.0)), float(ref.get('scale', 1.0))
        a = (float(ref['lo']) - loc) / scale
        b = (float(ref['hi']) - loc) / scale
        return stats.truncnorm(a, b, loc=loc, scale=scale)
    raise ProxDiffError(f"Unknown reference law: {kind}")


def constrained_optimum(c: Composite) -> Optional[np.ndarray]:
    """Minimizer of f over dom(g) (the beta = 1 composite), used for optimality gaps."""
    try:
        return composite_minimizer(replace(c, beta=1.0))
    except OracleError:
        return None


def run_cell(spec: ExperimentSpec, entry: Dict[str, Any], seed: int, root: Path) -> Dict[str, Any]:
    """
    One (sampler, seed) cell.

    Returns:
        Summary row; 'success' is False and 'error' set when the cell failed
    """
    label = spec.label(entry)
    row: Dict[str, Any] = {'experiment': spec.name, 'sampler': label, 'seed': int(seed)}
    try:
        settings = spec.cell_settings(entry)
        schedule = schedule_from_dict(settings['schedule'])
        c = potential_from_dict(settings['potential'])
        cfg = sampler_config_from_dict(dict(settings['sampler'], seed=int(seed)), schedule)
        batch = run_sampler(cfg, c)
    except ProxDiffError as e:
        return dict(row, success=False, error=str(e))

    cell_dir = root / label / str(seed)
    write_samples_csv(cell_dir / 'samples.csv', batch.samples)
    row.update(success=True, steps=batch.steps, chains=batch.chains)
    if 'feasibility' in spec.metrics or 'optimality_gap' in spec.metrics:
        measured = metrics(batch, c, optimum=constrained_optimum(c), compute_optimum=False)
        row['feasibility'] = measured['feasibility']
        row['optimality_gap'] = measured['optimality_gap']
    if 'mean' in spec.metrics:
        row['mean'] = np.mean(batch.samples, axis=0).tolist()
    if batch.dim == 1:
        if 'mode' in spec.metrics:
            row['mode'] = kde_mode(batch.samples)
        if 'w1' in spec.metrics:
            row['w1'] = empirical_w1(batch.samples, reference_law(spec.reference))
        if spec.emit_hist:
            ref = spec.reference or {}
            lo, hi = ref.get('lo'), ref.get('hi')
            if lo is not None:
                lo, hi = float(lo) - 0.5, float(hi) + 0.5
            write_histogram_csv(cell_dir / 'histogram.csv', histogram(batch.samples, spec.emit_hist, lo, hi))
        if cfg.prox_source == 'joint_exact' and cfg.kind == 'pgm' and c.has_exact_prox:
            row['w1_exact'] = exact_law_w1(c, schedule)
    write_json(cell_dir / 'metadata.json', dict(batch.metadata, seed=batch.seed, steps=batch.steps))
    return row


def exact_law_w1(c: Composite, schedule) -> Optional[float]:
    """W1 between the exact PGM output law and the Gaussian target (1D, linear prox)."""
    try:
        mean, cov = linear_gaussian_law(schedule, c)
        t_mean, t_cov = gaussian_target(c)
    except (OracleError, np.linalg.LinAlgError):
        return None
    return gaussian_w1_1d(float(mean[0]), float(np.sqrt(cov[0, 0])), float(t_mean[0]), float(np.sqrt(t_cov[0, 0])))


def aggregate(rows: List[Dict[str, Any]]) -> Dict[str, Dict[str, float]]:
    """Mean of every scalar metric over seeds, per sampler label."""
    out: Dict[str, Dict[str, float]] = {}
    for label in sorted({r['sampler'] for r in rows}):
        cells = [r for r in rows if r['sampler'] == label and r.get('success')]
        agg: Dict[str, float] = {}
        for key in ('feasibility', 'optimality_gap', 'mode', 'w1', 'w1_exact'):
            values = [r[key] for r in cells if r.get(key) is not None]
            if values:
                agg[key] = float(np.mean(values))
        out[label] = agg
    return out


def evaluate_check(check: Dict[str, Any], agg: Dict[str, Dict[str, float]]) -> Dict[str, Any]:
    """
    Evaluate one check against aggregated metrics.

    Kinds: 'band' (lo <= value <= hi), 'greater' (label beats other),
    'monotone' (along 'order' with 'tolerance') and 'slope' (log-log fit <= max).
    """
    kind = check.get('kind')
    metric = check.get('metric')
    result = dict(check)
    try:
        if kind == 'band':
            value = agg[check['label']][metric]
            result.update(value=value, within_band=bool(check['lo'] <= value <= check['hi']))
        elif kind == 'greater':
            a, b = agg[check['label']][metric], agg[check['other']][metric]
            result.update(value=a, other_value=b, within_band=bool(a > b))
        elif kind == 'monotone':
            values = [agg[label][metric] for label in check['order']]
            tol = float(check.get('tolerance', 0.0))
            diffs = np.diff(values)
            ok = np.all(diffs >= -tol) if check.get('direction') == 'nondecreasing' else np.all(diffs <= tol)
            result.update(values=values, within_band=bool(ok))
        elif kind == 'slope':
            labels = list(check['x'])
            xs = np.log([float(check['x'][label]) for label in labels])
            ys = np.log([agg[label][metric] for label in labels])
            slope = float(np.polyfit(xs, ys, 1)[0])
            result.update(slope=slope, within_band=bool(slope <= check['max']))
        else:
            result.update(within_band=None, note=f"unknown check kind {kind}")
    except KeyError as e:
        result.update(within_band=None, note=f"missing metric or label: {e}")
    return result


class ExperimentService(BaseService):
    """
    Runs an ExperimentSpec.

    Config keys: 'spec' (ExperimentSpec), 'workers' and optionally 'out'
    overriding the spec's output directory.
    """

    required_params = ('spec',)

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        super().__init__("experiment", config)
        self.rows: List[Dict[str, Any]] = []

    def get_info(self) -> Dict[str, Any]:
        return {
            'name': 'Experiment Runner',
            'description': 'Runs (sampler, seed) cells and writes summary reports',
            'outputs': ['<sampler>/<seed>/samples.csv', 'summary.csv', 'report.json'],
        }

    def _cells(self, spec: ExperimentSpec) -> List[Tuple[Dict[str, Any], int]]:
        return [(entry, seed) for entry in spec.samplers for seed in spec.seeds]

    def _run(self) -> Dict[str, Any]:
        spec: ExperimentSpec = self.config['spec']
        root = Path(self.config.get('out') or spec.out) / spec.name
        workers = max(int(self.config.get('workers', 1)), 1)
        cells = self._cells(spec)
        self.logger.info(f"Experiment {spec.name}: {len(cells)} cells, {workers} workers")

        def run(cell):
            entry, seed = cell
            self.logger.info(f"cell {spec.label(entry)} seed={seed}")
            return run_cell(spec, entry, seed, root)

        if workers == 1:
            rows = [run(cell) for cell in cells]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(run, cells))
        rows.sort(key=lambda r: (r['sampler'], r['seed']))
        for row in rows:
            if not row['success']:
                self.logger.warning(f"cell {row['sampler']} seed={row['seed']} failed: {row['error']}")
        self.rows = rows

        agg = aggregate(rows)
        checks = [evaluate_check(check, agg) for check in spec.checks]
        failures = sum(1 for r in rows if not r['success'])
        write_csv(root / 'summary.csv', rows, fieldnames=SUMMARY_FIELDS)
        report = {
            'header': report_header(spec.to_dict(), spec.seeds),
            'experiment': spec.name,
            'cells': rows,
            'aggregate': agg,
            'checks': checks,
            'notes': spec.notes,
            'failures': failures,
        }
        write_json(root / 'report.json', report)
        if failures:
            return Reports.error_entry(f"{failures} of {len(rows)} cells failed", data=report)
        return Reports.success_entry(report)
