"""Real zero-mean scalar fields on the 2-torus in truncated Fourier form.

Conventions used throughout the package:

* The domain is [0, 2pi]^2, so the Laplacian eigenvalue of the Fourier mode
  k = (kx, ky) is |k|^2 with integer kx, ky.
* theta(x) = sum_k theta_hat[k] exp(i k.x). Coefficients are kept on the
  square lattice max(|kx|, |ky|) <= N as a complex array ``c`` with
  ``c[..., ky + N, kx + N] = theta_hat[(kx, ky)]``; leading axes are batch
  dimensions. A real field satisfies c[-k] = conj(c[k]) and carries no
  k = 0 entry (zero spatial mean).
* Parseval: integral of theta^2 over the torus = (2pi)^2 sum_k |c_k|^2.
  All norm helpers return physical-space integrals under this convention.

Nonlinear terms are formed pseudospectrally on a padded physical grid of
``padding_factor * (2N+1)`` points per direction (rounded up to an FFT
friendly length). padding_factor >= 2 gives M >= 4N + 2, which is alias
free for products of up to three cutoff fields; the common 3/2 rule only
covers quadratic products.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as _fft

TWO_PI = 2.0 * np.pi
FOUR_PI_SQ = TWO_PI**2


class DimensionMismatchError(ValueError):
    """Coefficient array shape disagrees with the grid it is used on."""


@dataclass(frozen=True)
class GridSpec:
    """Cutoff lattice plus the padded grid used for nonlinear products."""

    cutoff: int
    padding_factor: int = 2

    def __post_init__(self):
        if self.cutoff < 1:
            raise ValueError("cutoff must be a positive integer")
        if self.padding_factor < 2:
            raise ValueError(
                "padding_factor must be >= 2: the cubic gradient term is only "
                "dealiased on a grid of at least 4N+2 points per direction"
            )

    @property
    def n_modes(self) -> int:
        return 2 * self.cutoff + 1

    @property
    def phys_size(self) -> int:
        return _fft.next_fast_len(self.padding_factor * self.n_modes, real=True)


@lru_cache(maxsize=None)
def _mode_arrays(cutoff: int):
    k = np.arange(-cutoff, cutoff + 1, dtype=np.float64)
    kx = np.broadcast_to(k[None, :], (2 * cutoff + 1, 2 * cutoff + 1)).copy()
    ky = np.broadcast_to(k[:, None], (2 * cutoff + 1, 2 * cutoff + 1)).copy()
    ksq = kx * kx + ky * ky
    inv_knorm = np.zeros_like(ksq)
    nz = ksq > 0
    inv_knorm[nz] = 1.0 / np.sqrt(ksq[nz])
    for a in (kx, ky, ksq, inv_knorm):
        a.setflags(write=False)
    return kx, ky, ksq, inv_knorm


def mode_numbers(grid: GridSpec):
    """Integer-valued (kx, ky) arrays matching the coefficient layout."""
    kx, ky, _, _ = _mode_arrays(grid.cutoff)
    return kx, ky


def laplacian_eigenvalues(grid: GridSpec):
    """|k|^2 on the coefficient lattice (zero at the absent mean mode)."""
    return _mode_arrays(grid.cutoff)[2]


def zero_field(grid: GridSpec, batch: tuple = ()) -> np.ndarray:
    K = grid.n_modes
    return np.zeros(batch + (K, K), dtype=np.complex128)


def _check_shape(theta_hat: np.ndarray, grid: GridSpec):
    K = grid.n_modes
    if theta_hat.ndim < 2 or theta_hat.shape[-2:] != (K, K):
        raise DimensionMismatchError(
            f"expected trailing shape ({K}, {K}) for cutoff {grid.cutoff}, "
            f"got {theta_hat.shape}"
        )


def validate_spectrum(theta_hat: np.ndarray, grid: GridSpec, atol: float = 1e-12):
    """Raise if the array is not a valid real zero-mean cutoff field."""
    _check_shape(theta_hat, grid)
    N = grid.cutoff
    scale = max(np.max(np.abs(theta_hat)), 1.0)
    sym = np.max(np.abs(theta_hat - np.conj(theta_hat[..., ::-1, ::-1])))
    if sym > atol * scale:
        raise ValueError(f"Hermitian symmetry violated by {sym:.3e}")
    mean = np.max(np.abs(theta_hat[..., N, N]))
    if mean > atol * scale:
        raise ValueError(f"nonzero mean mode: |c_0| = {mean:.3e}")


def hermitize(theta_hat: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian (real-field) subspace and drop the mean."""
    out = 0.5 * (theta_hat + np.conj(theta_hat[..., ::-1, ::-1]))
    N = (out.shape[-1] - 1) // 2
    out[..., N, N] = 0.0
    return out


# ---------------------------------------------------------------------------
# transforms

def to_physical(theta_hat: np.ndarray, grid: GridSpec, out_size: int | None = None) -> np.ndarray:
    """Synthesize samples on the padded grid; exact for cutoff fields."""
    _check_shape(theta_hat, grid)
    N = grid.cutoff
    M = grid.phys_size if out_size is None else out_size
    if M < grid.n_modes + 1:
        raise DimensionMismatchError(f"physical grid {M} cannot hold cutoff {N}")
    rows = np.arange(-N, N + 1) % M
    cols = np.arange(N + 1)
    half = np.zeros(theta_hat.shape[:-2] + (M, M // 2 + 1), dtype=np.complex128)
    half[..., rows[:, None], cols[None, :]] = theta_hat[..., :, N:]
    return _fft.irfft2(half, s=(M, M)) * (M * M)


def to_spectral(samples: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Analyze padded-grid samples back to cutoff coefficients.

    Modes beyond the cutoff are discarded (Galerkin truncation) and the
    spatial mean is projected out.
    """
    M = samples.shape[-1]
    if samples.ndim < 2 or samples.shape[-2] != M:
        raise DimensionMismatchError("physical samples must be square on the last two axes")
    N = grid.cutoff
    if M < grid.n_modes + 1:
        raise DimensionMismatchError(f"physical grid {M} cannot resolve cutoff {N}")
    half = _fft.rfft2(samples) / (M * M)
    rows = np.arange(-N, N + 1) % M
    cols = np.arange(N + 1)
    K = grid.n_modes
    c = np.zeros(samples.shape[:-2] + (K, K), dtype=np.complex128)
    c[..., :, N:] = half[..., rows[:, None], cols[None, :]]
    c[..., :, :N] = np.conj(c[..., ::-1, ::-1])[..., :, :N]
    c[..., N, N] = 0.0
    return c


def integrate_physical(samples: np.ndarray) -> np.ndarray | float:
    """Quadrature of samples over the torus (exact for band-limited data)."""
    M = samples.shape[-1]
    cell = (TWO_PI / M) ** 2
    return np.sum(samples, axis=(-2, -1)) * cell


# ---------------------------------------------------------------------------
# Fourier multipliers

def fractional_laplacian(theta_hat: np.ndarray, grid: GridSpec, s: float) -> np.ndarray:
    """Apply (-Laplacian)^s, i.e. multiply mode k by |k|^(2s)."""
    _check_shape(theta_hat, grid)
    _, _, ksq, _ = _mode_arrays(grid.cutoff)
    mult = np.zeros_like(ksq)
    nz = ksq > 0
    mult[nz] = ksq[nz] ** s
    return theta_hat * mult


def gradient(theta_hat: np.ndarray, grid: GridSpec):
    kx, ky, _, _ = _mode_arrays(grid.cutoff)
    return 1j * kx * theta_hat, 1j * ky * theta_hat


def riesz_velocity(theta_hat: np.ndarray, grid: GridSpec):
    """Divergence-free velocity (-d/dy, d/dx)(-Laplacian)^(-1/2) theta.

    Mode k carries the multiplier i(-ky, kx)/|k|, so k . u_hat(k) vanishes
    identically.
    """
    _check_shape(theta_hat, grid)
    kx, ky, _, inv = _mode_arrays(grid.cutoff)
    w = 1j * inv * theta_hat
    return -ky * w, kx * w


def spectral_divergence(u1_hat: np.ndarray, u2_hat: np.ndarray, grid: GridSpec) -> np.ndarray:
    kx, ky, _, _ = _mode_arrays(grid.cutoff)
    return kx * u1_hat + ky * u2_hat


# ---------------------------------------------------------------------------
# nonlinear terms (pseudospectral, fully dealiased)

def nonlinear_terms(
    theta_hat: np.ndarray,
    grid: GridSpec,
    want_advection: bool = True,
    want_p_laplacian: bool = True,
):
    """Galerkin projections of u . grad(theta) and div(|grad theta|^2 grad theta).

    The two terms share the physical-space gradient, so requesting both
    costs seven transforms instead of nine. Either result may be None when
    not requested.
    """
    _check_shape(theta_hat, grid)
    if not (want_advection or want_p_laplacian):
        return None, None
    kx, ky, _, _ = _mode_arrays(grid.cutoff)
    tx = to_physical(1j * kx * theta_hat, grid)
    ty = to_physical(1j * ky * theta_hat, grid)
    adv_hat = None
    plap_hat = None
    if want_advection:
        u1_hat, u2_hat = riesz_velocity(theta_hat, grid)
        u1 = to_physical(u1_hat, grid)
        u2 = to_physical(u2_hat, grid)
        adv_hat = to_spectral(u1 * tx + u2 * ty, grid)
    if want_p_laplacian:
        gsq = tx * tx + ty * ty
        fx_hat = to_spectral(gsq * tx, grid)
        fy_hat = to_spectral(gsq * ty, grid)
        plap_hat = 1j * kx * fx_hat + 1j * ky * fy_hat
    return adv_hat, plap_hat


def advection_term(theta_hat: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Galerkin projection of u . grad(theta), u the Riesz velocity."""
    adv, _ = nonlinear_terms(theta_hat, grid, True, False)
    return adv


def p_laplacian_term(theta_hat: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Galerkin projection of div(|grad theta|^2 grad theta)."""
    _, plap = nonlinear_terms(theta_hat, grid, False, True)
    return plap


# ---------------------------------------------------------------------------
# norms and pairings

def _abs_sq(c: np.ndarray) -> np.ndarray:
    return c.real * c.real + c.imag * c.imag


def l2_sq(theta_hat: np.ndarray):
    """integral theta^2 dx."""
    return FOUR_PI_SQ * np.sum(_abs_sq(theta_hat), axis=(-2, -1))


def sobolev_sq(theta_hat: np.ndarray, grid: GridSpec, s: float):
    """integral |(-Laplacian)^(s/2) theta|^2 dx = (2pi)^2 sum |k|^(2s) |c_k|^2."""
    _check_shape(theta_hat, grid)
    _, _, ksq, _ = _mode_arrays(grid.cutoff)
    mult = np.zeros_like(ksq)
    nz = ksq > 0
    mult[nz] = ksq[nz] ** s
    return FOUR_PI_SQ * np.sum(mult * _abs_sq(theta_hat), axis=(-2, -1))


def grad_l4_4(theta_hat: np.ndarray, grid: GridSpec):
    """integral |grad theta|^4 dx by quadrature on the padded grid."""
    tx_hat, ty_hat = gradient(theta_hat, grid)
    tx = to_physical(tx_hat, grid)
    ty = to_physical(ty_hat, grid)
    gsq = tx * tx + ty * ty
    return integrate_physical(gsq * gsq)


def inner_l2(a_hat: np.ndarray, b_hat: np.ndarray):
    """L2 pairing integral a b dx of two real fields."""
    return FOUR_PI_SQ * np.sum(
        a_hat.real * b_hat.real + a_hat.imag * b_hat.imag, axis=(-2, -1)
    )
