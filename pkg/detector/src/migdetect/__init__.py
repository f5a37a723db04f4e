"""Anomaly detection study over QUIC migration-mimicry feature datasets.

Consumes the testbed's documented CSV schema and run manifests; trains the
five study classifiers; reports anomaly-class precision/recall/F1 plus
accuracy, feature importances, and the timing-mimicry ablation.
"""

__version__ = "0.1.0"
