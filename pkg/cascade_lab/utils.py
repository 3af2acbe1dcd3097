from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from cascade_lab.errors import ConfigError


def log_info(msg: str, *, out) -> None:
    print(f"[INFO] {msg}", file=out)


def log_warn(msg: str, *, err) -> None:
    print(f"[WARN] {msg}", file=err)


def log_error(msg: str, *, err) -> None:
    print(f"[ERROR] {msg}", file=err)


# How far upwards we search when trying to locate the repo root.
FIND_UPWARDS_LIMIT = 8


@dataclass(frozen=True)
class RepoMarkers:
    """Files/dirs that must exist for a directory to be considered the repo root."""

    files: tuple[str, ...] = ("pyproject.toml",)
    dirs: tuple[str, ...] = ("cascade_lab", "configs")


def _has_markers(path: Path, markers: RepoMarkers) -> bool:
    return all((path / f).is_file() for f in markers.files) and all(
        (path / d).is_dir() for d in markers.dirs
    )


def find_upwards(start: Path, *, markers: RepoMarkers) -> Path | None:
    """Walk upwards from start until we find a directory that matches markers."""

    cur = start.resolve()
    for _ in range(FIND_UPWARDS_LIMIT):
        if _has_markers(cur, markers):
            return cur
        if cur.parent == cur:
            break
        cur = cur.parent
    return None


def default_config_path(name: str = "acceptance.json") -> Path | None:
    """Locate a committed config under <repo>/configs, or None outside a checkout."""

    root = find_upwards(Path(__file__).parent, markers=RepoMarkers())
    if root is None:
        return None
    path = root / "configs" / name
    return path if path.is_file() else None


def read_json_file(path: Path) -> Any:
    """Read and parse a JSON config file; missing or malformed files raise ConfigError."""
    try:
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Failed to parse {path}: {e}") from e


def to_jsonable(value: Any) -> Any:
    """Convert Fractions, numpy scalars and tuples into plain JSON values."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, Fraction):
        return float(value)
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        # JSON has no infinities; the paired log or linear field carries the magnitude
        return None
    return value


def dump_json(value: Any) -> str:
    # sort_keys keeps artifacts byte-identical between runs
    return json.dumps(to_jsonable(value), indent=2, sort_keys=True) + "\n"


def format_float(x: float) -> str:
    return repr(float(x))


def parse_scalar(token: str) -> int | float | Fraction:
    """Parse `3`, `1/3` or `0.25`; integers and ratios stay exact."""
    tok = token.strip()
    if "/" in tok:
        num, _, den = tok.partition("/")
        return Fraction(int(num), int(den))
    if tok.lstrip("+-").isdigit():
        return int(tok)
    return float(tok)


def log_scalar(x: int | float | Fraction) -> float:
    """Natural log that survives Fractions far outside the double range."""
    if x == 0:
        return -math.inf
    if isinstance(x, Fraction):
        return math.log(x.numerator) - math.log(x.denominator)
    return math.log(x)
