"""Plain-text matrix format shared by kernels and couplings.

::

    klap-kernel v1 <rows> <cols>
    <row 0 entries, space separated>
    ...

Entries are written with 17 significant digits so a round trip through
text reproduces every float exactly.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .errors import DataError

KERNEL_TAG = "klap-kernel"
COUPLING_TAG = "klap-coupling"
VERSION = "v1"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps(matrix, tag: str) -> str:
    m = np.asarray(matrix, dtype=float)
    lines = [f"{tag} {VERSION} {m.shape[0]} {m.shape[1]}"]
    lines.extend(" ".join(fmt(v) for v in row) for row in m)
    return "\n".join(lines) + "\n"


def loads(text: str, tag: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty matrix file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != tag or head[1] != VERSION:
        raise DataError(f"line 1: expected header '{tag} {VERSION} <rows> <cols>', got {lines[0]!r}")
    try:
        rows, cols = int(head[2]), int(head[3])
    except ValueError:
        raise DataError(f"line 1: bad dimensions in {lines[0]!r}") from None
    if len(lines) - 1 != rows:
        raise DataError(f"expected {rows} rows, found {len(lines) - 1}")
    out = np.empty((rows, cols))
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != cols:
            raise DataError(f"line {i + 2}: expected {cols} entries, found {len(parts)}")
        try:
            out[i] = [float(v) for v in parts]
        except ValueError as exc:
            raise DataError(f"line {i + 2}: {exc}") from None
    return out


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_kernel(kernel, path) -> None:
    write_atomic(path, dumps(kernel.matrix, KERNEL_TAG))


def load_kernel(path, label: str | None = None):
    from .kernels import CorruptionKernel

    with open(path) as fh:
        m = loads(fh.read(), KERNEL_TAG)
    return CorruptionKernel(m, label=label or os.path.basename(os.fspath(path)))


def save_coupling(coupling, path) -> None:
    write_atomic(path, dumps(coupling.joint, COUPLING_TAG))


def load_coupling_matrix(path) -> np.ndarray:
    with open(path) as fh:
        return loads(fh.read(), COUPLING_TAG)
