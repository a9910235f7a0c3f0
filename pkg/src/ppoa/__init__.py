"""Group-separated secure aggregation for federated matrix factorization.

Modules: ``dataset`` (MovieLens ingestion and splits), ``mf`` (the
recommender and its metrics), ``quantizer``, ``secagg`` (zero-sum masks),
``orthoagg`` (orthogonal per-group aggregation), ``fairness`` (the F2MF
baseline), ``attack`` (attribute inference on F2MF uploads), ``server`` and
``federation`` (round engine), ``config`` and ``cli``.
"""

__version__ = "0.1.0"
