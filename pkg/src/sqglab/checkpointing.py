"""Bit-exact binary checkpoints of the stepper state.

Layout (all little-endian):

    magic     4 bytes  b"SQGF"
    bom       u16      0xFEFF sentinel; rejects byte-swapped files
    version   u16
    cutoff    u32
    padding   u32
    t         f64
    alpha     f64
    seed      u64
    stream    u64
    counter   u64
    n_coeff   u64
    payload   n_coeff * 2 f64, re/im interleaved, canonical mode order

The canonical mode order enumerates one representative per conjugate pair
(kx > 0, or kx = 0 and ky > 0) sorted lexicographically by (kx, ky); the
other half is reconstructed by conjugation, which is exact, so a round
trip reproduces the coefficient array bit for bit.
"""

from __future__ import annotations

import struct
from functools import lru_cache

import numpy as np

from .forcing import RngStream
from .integrator import StepperState
from .spectral import GridSpec

MAGIC = b"SQGF"
BOM = 0xFEFF
VERSION = 1
_HEADER = struct.Struct("<4sHHII d d QQQ Q")


class CheckpointError(RuntimeError):
    pass


@lru_cache(maxsize=None)
def canonical_mode_indices(cutoff: int):
    """(row, col) array indices of the stored half lattice, (kx, ky) sorted."""
    modes = []
    for kx in range(0, cutoff + 1):
        ky_lo = 1 if kx == 0 else -cutoff
        for ky in range(ky_lo, cutoff + 1):
            if kx > 0 or ky > 0:
                modes.append((kx, ky))
    rows = np.array([ky + cutoff for kx, ky in modes], dtype=np.int64)
    cols = np.array([kx + cutoff for kx, ky in modes], dtype=np.int64)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def write_checkpoint(path, state: StepperState, alpha: float, grid: GridSpec) -> None:
    if state.theta_hat.ndim != 2:
        raise CheckpointError("checkpoints hold a single trajectory state")
    rows, cols = canonical_mode_indices(grid.cutoff)
    coeff = state.theta_hat[rows, cols]
    payload = np.empty(2 * coeff.shape[0], dtype="<f8")
    payload[0::2] = coeff.real
    payload[1::2] = coeff.imag
    rng = state.rng if state.rng is not None else RngStream(0, 0, 0)
    header = _HEADER.pack(
        MAGIC,
        BOM,
        VERSION,
        grid.cutoff,
        grid.padding_factor,
        float(state.t),
        float(alpha),
        rng.seed,
        rng.stream,
        rng.counter,
        coeff.shape[0],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_checkpoint(path):
    """Returns (state, alpha, grid); refuses foreign or corrupt files."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    (
        magic,
        bom,
        version,
        cutoff,
        padding,
        t,
        alpha,
        seed,
        stream,
        counter,
        n_coeff,
    ) = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; not a state checkpoint")
    if bom != BOM:
        raise CheckpointError("byte-order sentinel mismatch; foreign endianness refused")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    expected = _HEADER.size + 16 * n_coeff
    if len(raw) != expected:
        raise CheckpointError(
            f"checkpoint payload has {len(raw) - _HEADER.size} bytes, expected {16 * n_coeff}"
        )
    grid = GridSpec(cutoff, padding)
    rows, cols = canonical_mode_indices(cutoff)
    if n_coeff != rows.shape[0]:
        raise CheckpointError("coefficient count disagrees with the stated cutoff")
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    coeff = payload[0::2] + 1j * payload[1::2]
    K = grid.n_modes
    theta = np.zeros((K, K), dtype=np.complex128)
    theta[rows, cols] = coeff
    theta[(2 * cutoff) - rows, (2 * cutoff) - cols] = np.conj(coeff)
    state = StepperState(t, theta, RngStream(seed, stream, counter))
    return state, alpha, grid
