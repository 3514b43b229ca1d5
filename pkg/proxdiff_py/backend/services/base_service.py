"""
Base service class for proxdiff run services.
Provides the common interface the CLI drives: configure, run, report status.
"""

from abc import ABC, abstractmethod
from typing import Dict, Any, Optional, Sequence
import logging
import time

from ..reports import Reports


class BaseService(ABC):
    """
    Abstract base class for proxdiff services.

    A service wraps one CLI command (train, sample, experiment, verify). It
    holds its configuration section and records the outcome of its last run.
    Config keys listed in required_params must be present before _run.
    """

    required_params: Sequence[str] = ()

    def __init__(self, name: str, config: Optional[Dict[str, Any]] = None):
        """
        Initialize the service.

        Args:
            name: Service name
            config: Service configuration dictionary
        """
        self.name = name
        self.config = config or {}
        self.logger = logging.getLogger(f"proxdiff.services.{name}")
        self._running = False
        self._last_result: Optional[Dict[str, Any]] = None
        self._elapsed: Optional[float] = None

    @abstractmethod
    def _run(self) -> Dict[str, Any]:
        """
        Do the work of the service.

        Returns:
            Report dictionary with at least a 'success' key
        """
        pass

    @abstractmethod
    def get_info(self) -> Dict[str, Any]:
        """
        Get service information.

        Returns:
            Dictionary containing service metadata
        """
        pass

    def run(self) -> Dict[str, Any]:
        """
        Run the service once and remember the result.

        Returns:
            Report dictionary
        """
        self.logger.info(f"Starting {self.name}")
        ok, message = Reports.validate_required_params(self.config, self.required_params)
        if not ok:
            self.logger.error(message)
            self._last_result = Reports.error_entry(message)
            return self._last_result
        self._running = True
        started = time.perf_counter()
        try:
            result = self._run()
        finally:
            self._running = False
            self._elapsed = time.perf_counter() - started
        self._last_result = result
        self.logger.info(f"{self.name} finished in {self._elapsed:.2f}s (success={result.get('success')})")
        return result

    def get_status(self) -> Dict[str, Any]:
        """
        Get current service status.

        Returns:
            Dictionary containing service status information
        """
        return {
            'service': self.name,
            'running': self._running,
            'elapsed_seconds': self._elapsed,
            'last_success': None if self._last_result is None else self._last_result.get('success'),
        }

    def is_running(self) -> bool:
        return self._running

    def configure(self, config: Dict[str, Any]) -> None:
        """
        Update service configuration.

        Args:
            config: New configuration dictionary
        """
        self.config.update(config)
        self.logger.info(f"Service {self.name} configuration updated")
