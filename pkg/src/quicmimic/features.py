"""Detection-feature extraction and CSV export.

One row per outgoing short-header packet, carrying exactly the three
considered features: payload length, migration payload length (zero when the
packet does not open a migration), and the time delta to the previous
outgoing packet of the same flow (absent for a flow's first packet).
Labels come from generator/mimicry ground truth, never from any classifier.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

from .flows import Direction, FlowTable, PacketKind

CSV_COLUMNS = ("flow_id", "ts_us", "payload_len", "is_migration",
               "migration_payload_len", "time_delta_us", "label")


@dataclass
class FeatureRow:
    flow_id: str
    ts_us: int
    payload_len: int
    is_migration: bool
    migration_payload_len: int
    time_delta_us: Optional[int]  # None for the first packet of a flow
    label: str

    def __post_init__(self):
        if self.is_migration != (self.migration_payload_len > 0):
            raise ValueError("migration flag and migration payload length disagree")
        if self.time_delta_us is not None and self.time_delta_us < 0:
            raise ValueError("time deltas cannot be negative")


def extract(table: FlowTable) -> list:
    """Turn a completed flow table into ordered feature rows.

    The migration payload length is attached to the migration packet's own
    row only; subsequent rows of the migrated flow carry zero.
    """
    rows = []
    for flow in table.snapshot_flows():
        outgoing = sorted((r for r in flow.records
                           if r.direction is Direction.OUTGOING
                           and r.kind is PacketKind.SHORT),
                          key=lambda r: r.ts_us)
        prev_ts = None
        for rec in outgoing:
            delta = rec.ts_us - prev_ts if prev_ts is not None else None
            rows.append(FeatureRow(
                flow_id=flow.dcid.hex(),
                ts_us=rec.ts_us,
                payload_len=rec.payload_len,
                is_migration=rec.is_migration,
                migration_payload_len=rec.payload_len if rec.is_migration else 0,
                time_delta_us=delta,
                label=rec.label.value,
            ))
            prev_ts = rec.ts_us
    rows.sort(key=lambda r: (r.ts_us, r.flow_id))
    return rows


def export_csv(rows, path) -> None:
    """Write rows in the stable documented column order.

    An absent time delta is encoded as an empty field; booleans as 1/0.
    Re-exporting the same rows yields a byte-identical file.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow((r.flow_id, r.ts_us, r.payload_len,
                             1 if r.is_migration else 0, r.migration_payload_len,
                             "" if r.time_delta_us is None else r.time_delta_us,
                             r.label))


def load_csv(path) -> list:
    """Inverse of export_csv, for round-trip checks and downstream consumers."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected feature CSV header: {header}")
        for rec in reader:
            rows.append(FeatureRow(
                flow_id=rec[0], ts_us=int(rec[1]), payload_len=int(rec[2]),
                is_migration=rec[3] == "1", migration_payload_len=int(rec[4]),
                time_delta_us=None if rec[5] == "" else int(rec[5]),
                label=rec[6]))
    return rows


def anomaly_share(rows) -> float:
    """Fraction of rows labeled malicious (0.0 for an empty row list)."""
    if not rows:
        return 0.0
    return sum(1 for r in rows if r.label == "malicious") / len(rows)
