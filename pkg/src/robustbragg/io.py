"""Pulse files, JSON reports and CSV tables."""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .propagator import ControlPulse, TimeGrid

PULSE_FORMAT_VERSION = 1


def _plain(obj):
    """Recursively convert dataclasses, enums and numpy values to JSON types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def fingerprint(obj) -> str:
    """sha256 of the canonical JSON form of ``obj``."""
    text = json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def write_pulse(path, pulse: ControlPulse, model_fingerprint: str = "", n0: int | None = None) -> Path:
    """Text pulse file: ``# key: value`` header, then one sample per line.

    Samples are written with ``repr`` so reading them back is bit-exact.
    Only single-channel pulses are supported.
    """
    if pulse.channels != 1:
        raise ValueError("pulse files hold a single control channel")
    path = Path(path)
    header = {
        "version": PULSE_FORMAT_VERSION,
        "horizon": repr(pulse.grid.horizon),
        "steps": pulse.grid.steps,
        "lower": repr(float(pulse.lower[0])),
        "upper": repr(float(pulse.upper[0])),
        "fingerprint": model_fingerprint,
        "units": "u/omega_r",
    }
    if n0 is not None:
        header["n0"] = n0
    lines = [f"# {k}: {v}" for k, v in header.items()]
    lines += [repr(float(x)) for x in pulse.values[:, 0]]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_pulse(path) -> tuple[ControlPulse, dict]:
    """Inverse of :func:`write_pulse`; returns the pulse and its header."""
    header, samples = {}, []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        else:
            samples.append(float(line))
    try:
        version = int(header["version"])
        horizon = float(header["horizon"])
        steps = int(header["steps"])
        lower, upper = float(header["lower"]), float(header["upper"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed pulse header ({exc})") from None
    if version != PULSE_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported pulse file version {version}")
    if len(samples) != steps:
        raise ValueError(f"{path}: header says {steps} samples, found {len(samples)}")
    if "n0" in header:
        header["n0"] = int(header["n0"])
    pulse = ControlPulse(TimeGrid(horizon, steps), np.array(samples)[:, None], lower, upper)
    return pulse, header


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path, header: list[str], rows) -> Path:
    """Rectangular CSV with a header row; rejects ragged rows."""
    path = Path(path)
    rows = [list(r) for r in rows]
    for r in rows:
        if len(r) != len(header):
            raise ValueError(f"row has {len(r)} fields, header has {len(header)}")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
