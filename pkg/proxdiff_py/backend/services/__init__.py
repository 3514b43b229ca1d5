"""
Run services.
Each service wraps one CLI command.
"""

from .base_service import BaseService
from .experiment import ExperimentService
from .sampling import SamplingService
from .training import TrainingService
from .verification import VerificationService

__all__ = ['BaseService', 'ExperimentService', 'SamplingService', 'TrainingService', 'VerificationService']
