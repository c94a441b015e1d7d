from src.monitoring.error_reporting import FailureReporter, PerformanceMonitor
from src.monitoring.log_config import configure_logging

__all__ = ["FailureReporter", "PerformanceMonitor", "configure_logging"]
