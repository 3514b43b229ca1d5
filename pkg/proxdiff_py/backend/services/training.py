"""
Training service.

Runs Moreau score matching for a learned proximal network and writes the
parameter file plus the training curve.
"""

from pathlib import Path
from typing import Dict, Any, Optional

from .base_service import BaseService
from ..reports import Reports, write_csv, write_json
from ...core.errors import ProxDiffError, TrainingError
from ...core.proxnet import (
    init_params, lambda_encoding, prior_from_dict, prox_error, save_params, train,
    train_config_from_dict,
)
from ...core.schedules import schedule_from_dict


class TrainingService(BaseService):
    """
    Trains phi_theta on draws from the configured prior.

    Config keys: 'train', 'prior', 'schedule' sections and 'out' (directory).
    """

    required_params = ('train', 'prior', 'schedule')

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        super().__init__("training", config)
        self.params = None
        self.history = []

    def get_info(self) -> Dict[str, Any]:
        return {
            'name': 'Moreau Score Matching',
            'description': 'Unsupervised training of a proximal network from prior samples',
            'outputs': ['params.json', 'training_curve.csv', 'train_report.json'],
        }

    def _run(self) -> Dict[str, Any]:
        out = Path(self.config.get('out', 'runs/train'))
        try:
            cfg = train_config_from_dict(self.config.get('train', {}))
            schedule = schedule_from_dict(self.config.get('schedule', {}))
            g, sampler = prior_from_dict(self.config.get('prior', {'kind': 'interval'}))
            shift, scale = lambda_encoding(schedule)
            init = init_params(g.dim, cfg.hidden, cfg.seed, skip=cfg.skip,
                               lambda_shift=shift, lambda_scale=scale)
            self.history = []
            self.params = train(cfg, sampler, schedule, init=init, history=self.history)
        except TrainingError as e:
            self.logger.error(f"Training diverged at epoch {e.epoch}: {e}")
            if e.checkpoint is not None:
                save_params(e.checkpoint, out / 'checkpoint.json')
            return Reports.error_entry(str(e), epoch=e.epoch)
        except ProxDiffError as e:
            self.logger.error(f"Training failed: {e}")
            return Reports.error_entry(str(e))

        params_path = save_params(self.params, out / 'params.json')
        write_csv(out / 'training_curve.csv', self.history, fieldnames=['epoch', 'zeta', 'lr', 'loss'])
        summary = {
            'params': str(params_path),
            'epochs': cfg.epochs,
            'prior': g.describe(),
            'final_loss': self.history[-1]['loss'] if self.history else None,
        }
        if g.kind in ('interval', 'ball'):
            summary['prox_error'] = prox_error(self.params, g)
        report = Reports.success_entry(summary)
        write_json(out / 'train_report.json', report)
        return report
