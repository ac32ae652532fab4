"""Small batched Hermitian-matrix helpers used throughout the package.

All matrix fields are stored as numpy arrays of shape (..., d, d) with
Hermitian entries.  Fractional powers go through an eigendecomposition
with a relative eigenvalue floor so that nearly singular averages stay
usable instead of exploding.

The floor is 1e-13 times the largest eigenvalue of each matrix in the
batch; matrices whose smallest eigenvalue falls below the negative of
that floor are rejected as not PSD.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError

EIG_FLOOR_REL = 1e-13


def hermitize(mats: np.ndarray) -> np.ndarray:
    """Symmetrize (A + A*)/2 to wash out roundoff asymmetry."""
    return 0.5 * (mats + np.conj(np.swapaxes(mats, -1, -2)))


def hermitian_power(mats: np.ndarray, power: float) -> np.ndarray:
    """Batched fractional power of Hermitian PSD matrices.

    Eigenvalues are floored at ``EIG_FLOOR_REL * lambda_max`` per matrix.
    Raises DataError when a matrix is substantially non-PSD.
    """
    mats = np.asarray(mats)
    if mats.shape[-1] == 1:
        vals = mats[..., 0, 0].real
        top = np.maximum(np.abs(vals), 0.0)
        floor = EIG_FLOOR_REL * np.maximum(top, 1e-300)
        if np.any(vals < -floor):
            raise DataError("scalar weight value is negative")
        return np.clip(vals, floor, None)[..., None, None] ** power
    vals, vecs = np.linalg.eigh(hermitize(mats))
    top = np.maximum(vals[..., -1], 0.0)
    floor = EIG_FLOOR_REL * np.maximum(top, 1e-300)
    if np.any(vals[..., 0] < -1e-8 * np.maximum(top, 1e-300)):
        raise DataError("matrix average is not positive semidefinite")
    vals = np.maximum(vals, floor[..., None])
    scaled = vecs * (vals**power)[..., None, :]
    return scaled @ np.conj(np.swapaxes(vecs, -1, -2))


def hermitian_exp(mats: np.ndarray) -> np.ndarray:
    """Batched matrix exponential of Hermitian matrices (eigenbasis)."""
    mats = np.asarray(mats)
    if mats.shape[-1] == 1:
        return np.exp(mats.real.astype(float))
    vals, vecs = np.linalg.eigh(hermitize(mats))
    scaled = vecs * np.exp(vals)[..., None, :]
    return scaled @ np.conj(np.swapaxes(vecs, -1, -2))


def hermitian_sqrt(mats: np.ndarray) -> np.ndarray:
    return hermitian_power(mats, 0.5)


def hermitian_inv_sqrt(mats: np.ndarray) -> np.ndarray:
    return hermitian_power(mats, -0.5)


def max_eigenvalue(mats: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of each Hermitian matrix in the batch."""
    mats = np.asarray(mats)
    if mats.shape[-1] == 1:
        return mats[..., 0, 0].real
    return np.linalg.eigvalsh(hermitize(mats))[..., -1]


def pair_operator_norm_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """||a^{1/2} b^{1/2}||^2 for Hermitian PSD batches a, b.

    Equals the top eigenvalue of b^{1/2} a b^{1/2}, computed with a single
    square root.
    """
    s = hermitian_sqrt(b)
    return max_eigenvalue(s @ np.asarray(a) @ s)


def apply_matrix(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Batched matrix-vector product (..., d, d) x (..., d) -> (..., d)."""
    return np.einsum("...ij,...j->...i", mats, vecs)


def quad_form(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Real quadratic form <M v, v> for Hermitian batches."""
    return np.einsum("...i,...ij,...j->...", np.conj(vecs), mats, vecs).real
