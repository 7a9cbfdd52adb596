"""Flat text container for named float64 arrays.

One record per line: name, rank, the dims, then every value as a C99
hex float (`float.hex()`), space-separated, keys written in sorted order.
Hex floats round-trip float64 bit-for-bit, and a plain text file carries
no timestamps or other nondeterministic bytes, so two writes of equal
arrays are byte-identical. Names are dotted paths such as `theta.0.w`.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

_MAGIC = "tensorfile 1"


def write_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    lines = [_MAGIC]
    for name in sorted(arrays):
        if " " in name or "\n" in name or not name:
            raise ContractError(f"bad array name {name!r}")
        arr = np.asarray(arrays[name], dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ContractError(f"array {name!r} has non-finite entries")
        parts = [name, str(arr.ndim)]
        parts.extend(str(d) for d in arr.shape)
        parts.extend(v.hex() for v in arr.reshape(-1).tolist())
        lines.append(" ".join(parts))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ContractError(f"{path}: not a tensorfile container")
    out: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(" ")
        try:
            name = parts[0]
            rank = int(parts[1])
            shape = tuple(int(d) for d in parts[2 : 2 + rank])
            values = [float.fromhex(v) for v in parts[2 + rank :]]
        except (IndexError, ValueError) as exc:
            raise ContractError(f"{path}: malformed record at line {lineno}") from exc
        count = 1
        for d in shape:
            count *= d
        if len(values) != count:
            raise ContractError(
                f"{path}: record {name!r} has {len(values)} values for shape {shape}"
            )
        out[name] = np.array(values, dtype=np.float64).reshape(shape)
    return out
