"""Normalized sample covariance matrices and received energy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import SnapshotMatrix


@dataclass(frozen=True)
class ScmFeature:
    scm: np.ndarray  # (L, L) Hermitian, unit trace
    energy: float
    true_range: float | None = None

    def as_channels(self) -> np.ndarray:
        """Stack ``[Re C | Im C]`` into a real 2 x L x L array."""
        return np.stack([self.scm.real, self.scm.imag])


def normalize_snapshot(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=complex)
    norm = np.linalg.norm(r)
    if norm == 0:
        raise ValueError("cannot normalize a zero snapshot")
    return r / norm


def compute_scm(s: SnapshotMatrix, true_range: float | None = None) -> ScmFeature:
    """Average of outer products of unit-norm snapshots, plus the mean array energy."""
    R = s.coefficients
    norms = np.linalg.norm(R, axis=0)
    if np.any(norms == 0):
        raise ValueError("zero snapshot column")
    Rn = R / norms
    scm = Rn @ Rn.conj().T / R.shape[1]
    scm = 0.5 * (scm + scm.conj().T)
    return ScmFeature(scm=scm, energy=float(np.mean(norms**2)), true_range=true_range)


def stack_channels(feats) -> np.ndarray:
    """Batch of network inputs, shape (N, 2, L, L)."""
    return np.stack([f.as_channels() for f in feats])
