"""Spectral white-in-time forcing on the Laplacian eigenbasis of the torus.

The driving noise is sum_j a_j e_j(x) W_j(t) where the e_j are the real
eigenfunctions cos(k.x), sin(k.x) (one representative per conjugate pair
{k, -k}), normalized to unit L2 norm, with eigenvalues lambda_j = |k|^2 in
non-decreasing order. The weighted amplitude sums A_s = sum lambda_j^s a_j^2
appear in every balance identity, so they are computed here next to the
amplitudes that define them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .spectral import FOUR_PI_SQ, GridSpec, TWO_PI

# unit L2 norm on [0, 2pi]^2: integral cos(k.x)^2 dx = 2 pi^2
NORMALIZATION = 1.0 / (np.pi * np.sqrt(2.0))
# (theta, e_j) = PROJ_FACTOR * Re/-Im of the coefficient at +k
_PROJ_FACTOR = FOUR_PI_SQ * NORMALIZATION

_MASK64 = (1 << 64) - 1
# one Philox counter block per draw call; each block holds 2^70 64-bit words
_BLOCK_SHIFT = 70

COS, SIN = 0, 1


@dataclass(frozen=True)
class BasisEntry:
    lam: float
    kx: int
    ky: int
    parity: int  # COS or SIN


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """Ordered real eigenfunctions of -Laplacian with zero mean.

    Ordering is total and deterministic: (lambda, kx, ky, parity) with
    cosine before sine; the representative wavevector of each conjugate
    pair has kx > 0, or kx = 0 and ky > 0.
    """

    lam: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    parity: np.ndarray

    def __len__(self) -> int:
        return self.lam.shape[0]

    @property
    def entries(self) -> list[BasisEntry]:
        return [
            BasisEntry(float(l), int(x), int(y), int(p))
            for l, x, y, p in zip(self.lam, self.kx, self.ky, self.parity)
        ]


def enumerate_basis(max_lambda: float) -> EigenBasis:
    """All eigenfunctions with |k|^2 <= max_lambda in canonical order."""
    if max_lambda < 1:
        raise ValueError("max_lambda must be >= 1 (smallest torus eigenvalue)")
    kmax = int(np.floor(np.sqrt(max_lambda)))
    rows = []
    for kx in range(0, kmax + 1):
        ky_lo = 1 if kx == 0 else -kmax
        for ky in range(ky_lo, kmax + 1):
            lam = kx * kx + ky * ky
            if 0 < lam <= max_lambda:
                rows.append((lam, kx, ky, COS))
                rows.append((lam, kx, ky, SIN))
    rows.sort()
    lam = np.array([r[0] for r in rows], dtype=np.float64)
    kx = np.array([r[1] for r in rows], dtype=np.int64)
    ky = np.array([r[2] for r in rows], dtype=np.int64)
    parity = np.array([r[3] for r in rows], dtype=np.int64)
    for a in (lam, kx, ky, parity):
        a.setflags(write=False)
    return EigenBasis(lam, kx, ky, parity)


def basis_function_samples(entry: BasisEntry, n_points: int) -> np.ndarray:
    """Sample one eigenfunction on an n x n physical grid (test utility)."""
    x = TWO_PI * np.arange(n_points) / n_points
    X, Y = np.meshgrid(x, x, indexing="xy")
    phase = entry.kx * X + entry.ky * Y
    wave = np.cos(phase) if entry.parity == COS else np.sin(phase)
    return NORMALIZATION * wave


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Amplitudes a_j aligned with an EigenBasis (zeros beyond the cutoff)."""

    basis: EigenBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=np.float64)
        if a.shape != (len(self.basis),):
            raise ValueError("amplitudes must align one-to-one with the basis")
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitudes must be finite")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @property
    def a0(self) -> float:
        return spectral_sum(self, 0.0)


def spectral_sum(spec: NoiseSpec, s: float) -> float:
    """A_s = sum_j lambda_j^s a_j^2."""
    return float(np.sum(spec.basis.lam**s * spec.amplitudes**2))


def make_noise(
    max_lambda: float,
    rule: str = "inverse_lambda",
    scale: float = 1.0,
    lambda_min: float = 1.0,
) -> NoiseSpec:
    """Amplitude rules over the band lambda_min <= lambda <= max_lambda.

    "inverse_lambda" sets a_j = scale / lambda_j (A_0 and A_{-1/2} finite by
    construction); "constant" sets a_j = scale on the band.
    """
    basis = enumerate_basis(max_lambda)
    in_band = basis.lam >= lambda_min
    if rule == "inverse_lambda":
        a = np.where(in_band, scale / basis.lam, 0.0)
    elif rule == "constant":
        a = np.where(in_band, scale, 0.0)
    else:
        raise ValueError(f"unknown amplitude rule {rule!r}")
    return NoiseSpec(basis, a)


def noise_from_shells(shells: Iterable[tuple[float, float]]) -> NoiseSpec:
    """Explicit per-shell amplitudes: iterable of (lambda, amplitude)."""
    table = {float(l): float(a) for l, a in shells}
    if not table:
        raise ValueError("at least one shell is required")
    basis = enumerate_basis(max(table))
    a = np.array([table.get(float(l), 0.0) for l in basis.lam])
    return NoiseSpec(basis, a)


def default_noise(cutoff: int, scale: float = 1.0) -> NoiseSpec:
    """a_j = lambda_j^{-1} truncated at lambda <= (N/2)^2.

    Keeps the forcing band-limited well inside the cutoff so the dissipative
    range is resolved.
    """
    return make_noise((cutoff / 2) ** 2, "inverse_lambda", scale=scale)


@dataclass
class RngStream:
    """Counter-based splittable stream: (seed, stream, counter) fixes output.

    Each draw call consumes one Philox counter block, so state can be
    checkpointed as three integers and restored exactly. Distinct stream
    ids are statistically independent; a single stream must not be shared
    across concurrent callers.
    """

    seed: int
    stream: int = 0
    counter: int = 0

    def _key(self) -> int:
        return (self.seed & _MASK64) | ((self.stream & _MASK64) << 64)

    def normals(self, shape) -> np.ndarray:
        bg = np.random.Philox(key=self._key(), counter=self.counter << _BLOCK_SHIFT)
        self.counter += 1
        return np.random.Generator(bg).standard_normal(shape)

    def spawn(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream, 0)

    def clone(self) -> "RngStream":
        return RngStream(self.seed, self.stream, self.counter)


def _scatter_indices(spec: NoiseSpec, grid: GridSpec):
    N = grid.cutoff
    if np.max(np.abs(spec.basis.kx)) > N or np.max(np.abs(spec.basis.ky)) > N:
        raise ValueError("noise basis extends beyond the grid cutoff")
    K = grid.n_modes
    flat = (spec.basis.ky + N) * K + (spec.basis.kx + N)
    # contribution of xi_j to the coefficient at +k
    weight = np.where(spec.basis.parity == COS, 0.5, -0.5j) * NORMALIZATION
    return flat, weight * spec.amplitudes


def increment_from_normals(
    spec: NoiseSpec, dt: float, xi: np.ndarray, grid: GridSpec
) -> np.ndarray:
    """Coefficients of sum_j a_j sqrt(dt) xi_j e_j for given normals xi."""
    flat, w = _scatter_indices(spec, grid)
    K = grid.n_modes
    batch = xi.shape[:-1]
    vals = np.sqrt(dt) * (w * xi)
    out = np.zeros(batch + (K * K,), dtype=np.complex128)
    if batch:
        b = int(np.prod(batch))
        flat_out = out.reshape(b, K * K)
        np.add.at(
            flat_out,
            (np.arange(b)[:, None], flat[None, :]),
            vals.reshape(b, -1),
        )
    else:
        np.add.at(out, flat, vals)
    out = out.reshape(batch + (K, K))
    return out + np.conj(out[..., ::-1, ::-1])


def sample_increment(
    spec: NoiseSpec, dt: float, rng: RngStream, grid: GridSpec
) -> np.ndarray:
    """One Wiener increment of the forcing over a step of length dt.

    The expected squared L2 norm is dt * A_0.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    xi = rng.normals((len(spec.basis),))
    return increment_from_normals(spec, dt, xi, grid)


def sample_increment_batch(
    spec: NoiseSpec, dt: float, rngs: list[RngStream], grid: GridSpec
) -> np.ndarray:
    """Stacked increments, one independent stream per batch member."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    J = len(spec.basis)
    xi = np.stack([r.normals((J,)) for r in rngs])
    return increment_from_normals(spec, dt, xi, grid)


def project_coefficients(theta_hat: np.ndarray, basis: EigenBasis, grid: GridSpec) -> np.ndarray:
    """L2 projections (theta, e_j) for every basis entry; batch aware."""
    N = grid.cutoff
    at_k = theta_hat[..., basis.ky + N, basis.kx + N]
    cos_part = _PROJ_FACTOR * at_k.real
    sin_part = -_PROJ_FACTOR * at_k.imag
    return np.where(basis.parity == COS, cos_part, sin_part)


def project_physical(samples: np.ndarray, basis: EigenBasis) -> np.ndarray:
    """Projections (f, e_j) of arbitrary grid samples (mean mode ignored)."""
    import scipy.fft as _fft

    M = samples.shape[-1]
    half = _fft.rfft2(samples) / (M * M)
    kx = np.asarray(basis.kx)
    ky = np.asarray(basis.ky)
    rows = ky % M
    # representatives have kx >= 0, so they live in the rfft half-spectrum
    at_k = half[..., rows, kx]
    cos_part = _PROJ_FACTOR * at_k.real
    sin_part = -_PROJ_FACTOR * at_k.imag
    return np.where(basis.parity == COS, cos_part, sin_part)


def quadratic_variation(
    theta_hat: np.ndarray, spec: NoiseSpec, grid: GridSpec
) -> np.ndarray | float:
    """sum_j a_j^2 (theta, e_j)^2, the noise-weighted projection energy."""
    proj = project_coefficients(theta_hat, spec.basis, grid)
    return np.sum(spec.amplitudes**2 * proj**2, axis=-1)


def random_field(
    grid: GridSpec, rng: RngStream, band: int | None = None, rms: float = 1.0
) -> np.ndarray:
    """Random real zero-mean field, band-limited to max(|kx|,|ky|) <= band.

    Coefficients are i.i.d. complex Gaussians on the band, symmetrized,
    and rescaled so that sqrt(mean theta^2) = rms.
    """
    from .spectral import FOUR_PI_SQ, hermitize, l2_sq

    N = grid.cutoff
    band = N if band is None else min(band, N)
    K = grid.n_modes
    nb = 2 * band + 1
    draw = rng.normals((2, nb, nb))
    c = np.zeros((K, K), dtype=np.complex128)
    sl = slice(N - band, N + band + 1)
    c[sl, sl] = draw[0] + 1j * draw[1]
    c = hermitize(c)
    norm = np.sqrt(l2_sq(c) / FOUR_PI_SQ)
    if norm > 0:
        c *= rms / norm
    return c
