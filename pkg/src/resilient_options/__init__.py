"""Scale-free option price prediction that holds up under shifts in the
underlying's return distribution.

Modules: ``pricing`` (BSM, implied-vol approximation, volatility scalar),
``targets``, ``features``, ``ingest``, ``dataset``, ``gbt`` (boosted
trees), ``ensemble``, ``evaluation``, ``pipeline``, ``synthlab`` and the
``cli``.
"""

__version__ = "0.1.0"
