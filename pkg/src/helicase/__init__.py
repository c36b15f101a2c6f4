"""Uncertainty-guided multi-agent investigation engine.

Answers supply-chain queries by iteratively building a knowledge graph with
per-fact uncertainty, planning each iteration's actions by expected
uncertainty reduction per unit cost, and stopping on memory-uncertainty
stagnation.
"""

from .config import RunConfig, load_config
from .engine import RunError, RunResult, replay, run
from .kg import KnowledgeGraph
from .providers import ProviderSuite, build_fixture_suite, build_live_suite

__version__ = "0.1.0"

__all__ = [
    "KnowledgeGraph",
    "ProviderSuite",
    "RunConfig",
    "RunError",
    "RunResult",
    "build_fixture_suite",
    "build_live_suite",
    "load_config",
    "replay",
    "run",
    "__version__",
]
