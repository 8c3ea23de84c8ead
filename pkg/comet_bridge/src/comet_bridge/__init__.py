"""comet_bridge: score translation triples with neural MT metrics, emit TSV."""

__version__ = "0.1.0"

from comet_bridge.scorer import BridgeError, Triple, score_file

__all__ = ["BridgeError", "Triple", "score_file", "__version__"]
