import hashlib
import json
import math
from typing import Any

import numpy as np
from scipy.special import digamma

SIGNIFICANT_DIGITS = 12


def format_number(x: Any) -> str:
    """12 significant digits, '.' separator; integers and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.{SIGNIFICANT_DIGITS}g}"
    return str(x)


def round_floats(obj: Any) -> Any:
    """Recursively round floats to 12 significant digits for stable JSON output."""
    if isinstance(obj, dict):
        return {str(k): round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return format_number(x)
        return float(f"{x:.{SIGNIFICANT_DIGITS}g}")
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(round_floats(obj), sort_keys=True, separators=(",", ":"))


def config_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def harmonic_number(r: int) -> float:
    """H_r = 1 + 1/2 + ... + 1/r, with H_0 = 0."""
    if r <= 0:
        return 0.0
    return float(digamma(r + 1) + np.euler_gamma)
