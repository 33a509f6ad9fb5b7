import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np
import polars as pl

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 17


def _format_float(value: float) -> str:
    if math.isnan(value):
        return "NaN"
    if math.isinf(value):
        return "Infinity" if value > 0 else "-Infinity"
    return format(value, f".{SIGNIFICANT_DIGITS}g")


def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays, complex numbers and tuples into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with sorted keys and floats printed with 17 significant digits."""
    obj = to_jsonable(obj) if _level == 0 else obj
    pad = " " * (indent * (_level + 1))
    end_pad = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps(obj[k], indent, _level + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end_pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end_pad + "]"
    if isinstance(obj, float):
        return _format_float(obj)
    return json.dumps(obj)


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(dumps(obj) + "\n")
    logger.info(f"Wrote {path}")
    return path


def write_csv(path: str | Path, rows: list[dict] | pl.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = rows if isinstance(rows, pl.DataFrame) else pl.DataFrame(rows)
    df.write_csv(path, float_scientific=True, float_precision=SIGNIFICANT_DIGITS - 1)
    logger.info(f"Wrote {len(df)} rows to {path}")
    return path
