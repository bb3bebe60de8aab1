"""Unit commitment with AC power-flow feasibility via SDP sub-problems."""
from .orchestrator import Config, Report, solve
from .oracle import enumerate_solve
from .ucmaster import UCInstance, read_instance

__all__ = ["Config", "Report", "solve", "enumerate_solve", "UCInstance", "read_instance"]
__version__ = "0.1.0"
