"""JSON/CSV serialization and atomic file output.

Non-finite floats are written as the strings ``"inf"``, ``"-inf"`` and
``"nan"`` so that every JSON file is standard-conforming.  JSON floats use
Python's shortest round-trip representation; CSV floats use 17
significant digits.  Both reproduce the exact binary value on reading.

Scenario files
--------------
Normalized form::

    {"num_users": Q, "num_carriers": N,
     "gain_sq": [[[...N...]...Q...]...Q...],   # indexed [r][q][k]
     "snr_gap": [...Q...],
     "mask": [[...N...]...Q...],
     "usable_carriers": [[k, ...], ...]}       # optional, 0-based

Physical form (normalized on load)::

    {"raw_gains": [r][q][k] squared magnitudes, or [r][q][k][re, im],
     "tx_power": [...], "noise_var": [...], "distances": [[...]],
     "path_loss_exponent": g, "mask_watts": [[...]],
     "ser_target": [...]}                      # optional
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DomainError
from .model import PhysicalScenario, Scenario, normalize

__all__ = [
    "to_jsonable",
    "dumps",
    "atomic_write",
    "write_json",
    "read_json",
    "format_csv",
    "write_csv",
    "scenario_to_dict",
    "scenario_from_dict",
    "load_scenario",
    "save_scenario",
]


def to_jsonable(obj):
    """Convert numpy containers and non-finite floats to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, allow_nan=False) + "\n"


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and an atomic rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    atomic_write(path, format_csv(header, rows))


def _array(d, key, ndim):
    try:
        a = np.array(d[key], dtype=float)
    except KeyError:
        raise DomainError(f"scenario is missing field {key!r}") from None
    except (TypeError, ValueError) as exc:
        raise DomainError(f"field {key!r} is not a numeric array: {exc}") from None
    if a.ndim != ndim:
        raise DomainError(f"field {key!r} must be {ndim}-dimensional, got {a.ndim}")
    return a


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "num_users": s.num_users,
        "num_carriers": s.num_carriers,
        "gain_sq": s.gain_sq,
        "snr_gap": s.snr_gap,
        "mask": s.mask,
        "usable_carriers": [np.flatnonzero(row).tolist() for row in s.usable_carriers],
    }


def _sets_from_lists(lists, Q, N):
    if len(lists) != Q:
        raise DomainError("usable_carriers needs one list per user")
    sets = np.zeros((Q, N), dtype=bool)
    for q, ks in enumerate(lists):
        ks = np.asarray(ks, dtype=int)
        if ks.size and (ks.min() < 0 or ks.max() >= N):
            raise DomainError(f"usable carrier index out of range for user {q}")
        sets[q, ks] = True
    return sets


def scenario_from_dict(d: dict) -> Scenario:
    """Build a :class:`Scenario` from either the normalized or the physical form."""
    if not isinstance(d, dict):
        raise DomainError("scenario JSON must be an object")
    if "raw_gains" in d:
        raw = _array(d, "raw_gains", np.ndim(d["raw_gains"]))
        if raw.ndim == 4 and raw.shape[-1] == 2:
            raw = raw[..., 0] + 1j * raw[..., 1]
        elif raw.ndim != 3:
            raise DomainError("raw_gains must be [r][q][k] or [r][q][k][re, im]")
        phys = PhysicalScenario(
            raw_gains=raw,
            tx_power=_array(d, "tx_power", 1),
            noise_var=_array(d, "noise_var", 1),
            distances=_array(d, "distances", 2),
            path_loss_exponent=float(d.get("path_loss_exponent", 0.0)),
            mask_watts=_array(d, "mask_watts", 2),
            ser_target=None if d.get("ser_target") is None else _array(d, "ser_target", 1),
        )
        s = normalize(phys)
    else:
        s = Scenario(
            gain_sq=_array(d, "gain_sq", 3),
            snr_gap=_array(d, "snr_gap", 1),
            mask=_array(d, "mask", 2),
        )
    for key, value in (("num_users", s.num_users), ("num_carriers", s.num_carriers)):
        if key in d and int(d[key]) != value:
            raise DomainError(f"{key}={d[key]} disagrees with array shapes ({value})")
    if d.get("usable_carriers") is not None:
        s = s.with_usable_carriers(_sets_from_lists(d["usable_carriers"], s.num_users,
                                                    s.num_carriers))
    return s


def load_scenario(path) -> Scenario:
    return scenario_from_dict(read_json(path))


def save_scenario(path, s: Scenario) -> None:
    write_json(path, scenario_to_dict(s))
