"""Alarm sound detection: matched-filter, neural-network and sinusoid-model detectors with a shared evaluation harness."""

__version__ = "0.1.0"

from .registry import Registry, default_registry, load_registry  # noqa: E402
from .synth import AnnotatedScenario, make_benchmark  # noqa: E402
from .systems import SCHEMES, SYSTEMS, make_system  # noqa: E402
from .evaluation import MetricsReport, run_cv  # noqa: E402

__all__ = ["Registry", "default_registry", "load_registry", "AnnotatedScenario", "make_benchmark",
           "SCHEMES", "SYSTEMS", "make_system", "MetricsReport", "run_cv", "__version__"]
