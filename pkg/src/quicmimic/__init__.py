"""Loopback-only testbed for QUIC connection-migration traffic mimicry.

Subpackages cover the version-independent wire parser, per-flow tracking,
the mimicry engine, the closed-loop testbed, and detection-feature export.
Everything here operates exclusively against addresses the operator owns;
destination safety checks are enforced in both the engine and the CLI.
"""

__version__ = "0.1.0"
