"""
Sampling service.

Builds a schedule, a potential and a sampler from configuration sections,
draws one SampleBatch and writes it as CSV with a JSON metadata sidecar.
"""

from pathlib import Path
from typing import Dict, Any, Optional

import numpy as np

from .base_service import BaseService
from ..reports import Reports, write_histogram_csv, write_json, write_samples_csv
from ...core.errors import ConfigError, DivergenceError, ProxDiffError
from ...core.oracles import histogram, kde_mode, metrics
from ...core.potentials import potential_from_dict
from ...core.proxnet import load_params
from ...core.samplers import SampleBatch, run_sampler, sampler_config_from_dict
from ...core.schedules import schedule_from_dict


def describe_batch(batch: SampleBatch, c, optimum: Optional[np.ndarray] = None) -> Dict[str, Any]:
    """Feasibility, optimality gap and (in 1D) the KDE mode of a batch."""
    stats = metrics(batch, c, optimum=optimum)
    summary = {
        'sampler': batch.sampler,
        'seed': batch.seed,
        'steps': batch.steps,
        'chains': batch.chains,
        'feasibility': stats['feasibility'],
        'optimality_gap': stats['optimality_gap'],
        'mean': np.mean(batch.samples, axis=0).tolist(),
    }
    if batch.dim == 1:
        summary['mode'] = kde_mode(batch.samples)
    return summary


class SamplingService(BaseService):
    """
    Runs one sampler.

    Config keys: 'schedule', 'potential', 'sampler' sections, optional
    'params' (trained network file for prox 'learned'), 'out' and 'emit_hist'.
    """

    required_params = ('schedule', 'potential', 'sampler')

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        super().__init__("sampling", config)
        self.batch: Optional[SampleBatch] = None

    def get_info(self) -> Dict[str, Any]:
        return {
            'name': 'Sampler',
            'description': 'Proximal diffusion and baseline samplers',
            'outputs': ['samples.csv', 'metadata.json', 'histogram.csv'],
        }

    def _run(self) -> Dict[str, Any]:
        out = Path(self.config.get('out', 'runs/sample'))
        sampler_cfg = dict(self.config.get('sampler', {}))
        try:
            schedule = schedule_from_dict(self.config.get('schedule', {}))
            c = potential_from_dict(self.config.get('potential', {}))
            prox_source = None
            if sampler_cfg.get('prox') == 'learned':
                if not self.config.get('params'):
                    return Reports.error_entry("prox 'learned' needs a parameter file ('params')")
                prox_source = load_params(self.config['params'])
            cfg = sampler_config_from_dict(sampler_cfg, schedule, prox_source=prox_source)
            self.batch = run_sampler(cfg, c)
        except ConfigError:
            # unreadable parameter file: a usage error for the caller
            raise
        except DivergenceError as e:
            self.logger.error(f"Sampler diverged at step {e.step}: {e}")
            return Reports.error_entry(str(e), step=e.step)
        except ProxDiffError as e:
            self.logger.error(f"Sampling failed: {e}")
            return Reports.error_entry(str(e))

        samples_path = write_samples_csv(out / 'samples.csv', self.batch.samples)
        summary = describe_batch(self.batch, c)
        metadata = dict(self.batch.metadata, seed=self.batch.seed, steps=self.batch.steps,
                        potential=c.describe(), summary=summary)
        write_json(out / 'metadata.json', metadata)
        bins = int(self.config.get('emit_hist') or 0)
        if bins > 0 and self.batch.dim == 1:
            write_histogram_csv(out / 'histogram.csv', histogram(self.batch.samples, bins))
        return Reports.success_entry(summary, samples=str(samples_path))
