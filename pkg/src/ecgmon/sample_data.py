"""Bundled reference capture: twenty scored ECG sessions.

Used by the demos and tests as a stable dataset with known statistics;
load it as raw CSV text, parsed records, or an analytics Dataset.
"""

from __future__ import annotations

from importlib import resources

from . import analytics, device

__all__ = ["sample_csv", "sample_records", "sample_dataset"]


def sample_csv() -> str:
    """The bundled capture as CSV text (header plus 20 rows)."""
    return (resources.files("ecgmon") / "data" / "clinic_sessions.csv").read_text(encoding="utf-8")


def sample_records() -> list[device.PqrstRecord]:
    return device.load_csv(sample_csv())


def sample_dataset() -> analytics.Dataset:
    return analytics.Dataset.from_csv(sample_csv())
