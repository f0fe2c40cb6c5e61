"""Block-diagonal differences matrix D and its exact closed-form inverse.

D maps the coefficient vector beta to the penalized differences theta = D*beta:
adjacent differences within each fixed-effect block and, for treatment
blocks, differences across adjacent times within a cohort plus differences
between consecutive cohorts' initial effects. D has entries in {-1, 0, 1};
its inverse has entries in {0, 1} and is assembled from closed forms, never
by numerical inversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import sparse

from .design import DesignLayout


def build_d1(t: int) -> np.ndarray:
    """Upper bidiagonal t x t block: 1 on the diagonal, -1 above, lone 1 last."""
    m = np.eye(t)
    m[np.arange(t - 1), np.arange(1, t)] = -1.0
    return m


def build_d1_inv(t: int) -> np.ndarray:
    """Inverse of :func:`build_d1`: upper triangular all-ones."""
    return np.triu(np.ones((t, t)))


def build_d2(T: int, cohorts) -> np.ndarray:
    """W x W block acting on the stacked treatment effects.

    The stacked vector is cohort-major, time-minor. The row for each
    cohort's first effect either picks it directly (first cohort) or
    differences it against the previous cohort's first effect; remaining
    rows difference adjacent times within the cohort.
    """
    cohorts = tuple(cohorts)
    sizes = [T - r + 1 for r in cohorts]
    w = sum(sizes)
    m = np.zeros((w, w))
    off = 0
    prev_off = None
    for size in sizes:
        block = np.eye(size)
        block[np.arange(1, size), np.arange(size - 1)] = -1.0  # lower bidiagonal
        m[off : off + size, off : off + size] = block
        if prev_off is not None:
            m[off, prev_off] = -1.0  # first effect vs previous cohort's first
        prev_off = off
        off += size
    return m


def build_d2_inv(T: int, cohorts) -> np.ndarray:
    """Closed-form inverse of :func:`build_d2`.

    Block lower triangular: lower-triangular all-ones on the diagonal,
    all-ones first column in every subdiagonal block.
    """
    cohorts = tuple(cohorts)
    sizes = [T - r + 1 for r in cohorts]
    w = sum(sizes)
    m = np.zeros((w, w))
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    for k, size in enumerate(sizes):
        m[offs[k] : offs[k] + size, offs[k] : offs[k] + size] = np.tril(
            np.ones((size, size))
        )
        for k2 in range(k + 1, len(sizes)):
            m[offs[k2] : offs[k2] + sizes[k2], offs[k]] = 1.0
    return m


class PenaltyStructure(Protocol):
    """Hook for alternative invertible block-diagonal penalty structures."""

    def blocks(self, layout: DesignLayout) -> list[tuple[np.ndarray, np.ndarray]]:
        """Return (block, block_inverse) pairs in canonical column order."""
        ...


class DefaultFusion:
    """The standard structure: adjacent-difference fusion on every block."""

    def blocks(self, layout: DesignLayout) -> list[tuple[np.ndarray, np.ndarray]]:
        T, R, d = layout.n_times, layout.R, layout.d
        d1_R = (build_d1(R), build_d1_inv(R))
        d1_T = (build_d1(T - 1), build_d1_inv(T - 1))
        d2 = (build_d2(T, layout.cohorts), build_d2_inv(T, layout.cohorts))
        out = [d1_R, d1_T]
        out += [(np.eye(1), np.eye(1))] * d  # kappa penalized directly
        out += [d1_R] * d
        out += [d1_T] * d
        out.append(d2)
        out += [d2] * d
        return out


@dataclass(frozen=True)
class FusionMatrix:
    """Sparse p x p differences matrix and its exact inverse."""

    p: int
    d_mat: sparse.csr_array
    d_inv: sparse.csr_array
    layout: DesignLayout

    def d_inv_rows(self, rows) -> np.ndarray:
        """Dense copy of the requested rows of D^{-1}."""
        return self.d_inv[list(rows), :].toarray()


def build_fusion(
    layout: DesignLayout, structure: PenaltyStructure | None = None
) -> FusionMatrix:
    """Assemble D and D^{-1} for a layout, block-diagonally."""
    structure = structure or DefaultFusion()
    pairs = [(b, bi) for b, bi in structure.blocks(layout) if b.shape[0] > 0]
    d_mat = sparse.block_diag([sparse.csr_array(b) for b, _ in pairs], format="csr")
    d_inv = sparse.block_diag([sparse.csr_array(bi) for _, bi in pairs], format="csr")
    if d_mat.shape != (layout.p, layout.p):
        raise ValueError(
            f"penalty structure produced {d_mat.shape}, layout needs p={layout.p}"
        )
    return FusionMatrix(
        p=layout.p,
        d_mat=sparse.csr_array(d_mat),
        d_inv=sparse.csr_array(d_inv),
        layout=layout,
    )


def penalty_value(beta: np.ndarray, q: float, fusion: FusionMatrix) -> float:
    """The penalty ||D beta||_q^q = sum_j |(D beta)_j|^q."""
    if q <= 0:
        raise ValueError("q must be positive")
    diffs = fusion.d_mat @ np.asarray(beta, dtype=float)
    return float(np.sum(np.abs(diffs) ** q))


def reparameterize(design_values: np.ndarray, fusion: FusionMatrix) -> np.ndarray:
    """Right-multiply the design by D^{-1} (sparse), giving the bridge design."""
    # (Z @ D^-1) computed as (D^-T @ Z^T)^T to use sparse-dense matmul.
    return (fusion.d_inv.T @ design_values.T).T
