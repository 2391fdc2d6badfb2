"""Spectral lifting of the scalar penalties.

A penalty p on scalars induces a penalty on matrices through the singular
values, P(M) = sum_j p(sigma_j(M)), with concave remainder
Q(M) = sum_j q(sigma_j(M)).  This module provides the SVD plumbing, the
lifted penalty values, the gradient of Q, the exact prox of the nuclear
norm restricted to a nuclear-norm ball, and the subspace decompositions
used by the recovery analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .regularizers import RegularizerSpec, concave_part, concave_part_deriv, penalty

# singular values closer than this are treated as tied (non-differentiable)
TIE_GAP = 1e-8

# relative cutoff for numerical rank decisions
RANK_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SvdTriple:
    """Thin SVD with `u` (d1 x d), nonincreasing `sigma` (d,), `v` (d2 x d)."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


@dataclass(frozen=True, eq=False)
class SubspacePair:
    """Orthonormal factor pair (u: d1 x k, v: d2 x k) spanning a target's
    column and row spaces; defines the aligned/complement matrix subspaces."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.ndim != 2 or self.v.ndim != 2:
            raise ValueError("factors must be 2-d arrays")
        for f in (self.u, self.v):
            gram = f.T @ f
            if np.max(np.abs(gram - np.eye(f.shape[1]))) > 1e-10:
                raise ValueError("factors must have orthonormal columns")


def svd_triple(m: np.ndarray) -> SvdTriple:
    """Thin SVD of a dense matrix, validated.

    Raises ValueError on non-finite entries.
    """
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return SvdTriple(u=u, sigma=s, v=vt.T)


def singular_values(m: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)


def nuclear_norm(m: np.ndarray) -> float:
    return float(singular_values(m).sum())


def numerical_rank(m: np.ndarray, rel_tol: float = RANK_TOL) -> int:
    s = singular_values(m)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def spectral_penalty(m: np.ndarray, spec: RegularizerSpec) -> float:
    """P(M) = sum of the scalar penalty over singular values."""
    return float(np.sum(penalty(singular_values(m), spec)))


def spectral_concave(m: np.ndarray, spec: RegularizerSpec) -> float:
    """Q(M) = sum of the concave remainder over singular values."""
    return float(np.sum(concave_part(singular_values(m), spec)))


def spectral_concave_grad(m: np.ndarray, spec: RegularizerSpec) -> tuple[np.ndarray, bool]:
    """Gradient of Q at M, namely U diag(q'(sigma_j)) V^T.

    Returns (gradient, degenerate).  `degenerate` is set when two singular
    values are within ``TIE_GAP`` of each other; the formula value is still
    returned (q' is continuous with q'(0) = 0, so the expression stays
    well defined), but Q may not be differentiable there.
    """
    t = svd_triple(m)
    grad = (t.u * concave_part_deriv(t.sigma, spec)) @ t.v.T
    degenerate = bool(t.sigma.size > 1 and np.min(-np.diff(t.sigma)) < TIE_GAP)
    return grad, degenerate


def _water_level(s0: np.ndarray, omega: float) -> float:
    """Threshold raise theta >= 0 with sum(max(s0 - theta, 0)) = omega.

    Bisection on the monotone margin function, then a fixed-point polish on
    the active set so the constraint holds to machine precision.
    """

    def margin(theta):
        return np.maximum(s0 - theta, 0.0).sum() - omega

    theta = brentq(margin, 0.0, float(s0.max()), xtol=1e-15)
    for _ in range(s0.size):
        active = s0 - theta > 0.0
        if not active.any():
            break
        refined = max((s0[active].sum() - omega) / active.sum(), 0.0)
        if abs(refined - theta) <= 1e-18:
            theta = refined
            break
        theta = refined
    return theta


def prox_nuclear_in_ball(m: np.ndarray, threshold: float, omega: float) -> np.ndarray:
    """Exact prox of threshold * nuclear norm plus the indicator of
    {nuclear norm <= omega}.

    Both terms are absolutely symmetric functions of the singular values,
    so the matrix problem reduces to the vector problem on sigma:
    soft-threshold, and if the ball is still violated raise the effective
    threshold until the shrunk values sum to omega.
    """
    if omega <= 0.0:
        raise ValueError("ball radius omega must be positive")
    if threshold < 0.0:
        raise ValueError("threshold must be nonnegative")
    m = np.asarray(m, dtype=float)
    t = svd_triple(m)
    s0 = np.maximum(t.sigma - threshold, 0.0)
    if s0.sum() <= omega:
        if threshold == 0.0:
            return m.copy()
        s_star = s0
    else:
        s_star = np.maximum(s0 - _water_level(s0, omega), 0.0)
    return (t.u * s_star) @ t.v.T


def split_top(delta: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Split Delta into its top-2r spectral part and the remainder.

    Both pieces share Delta's singular vectors, so the sum is Delta and the
    pieces are mutually orthogonal.
    """
    if r < 1:
        raise ValueError("r must be a positive integer")
    t = svd_triple(delta)
    k = 2 * r
    if k > t.sigma.size:
        raise ValueError(f"2r = {k} exceeds min dimension {t.sigma.size}")
    head = (t.u[:, :k] * t.sigma[:k]) @ t.v[:, :k].T
    tail = (t.u[:, k:] * t.sigma[k:]) @ t.v[:, k:].T
    return head, tail


def subspace_project(m: np.ndarray, sub: SubspacePair, which: str) -> np.ndarray:
    """Project onto the aligned subspace ("span": rows and columns inside
    the factor spans) or its doubly-orthogonal complement ("complement")."""
    if m.shape != (sub.u.shape[0], sub.v.shape[0]):
        raise ValueError("matrix shape incompatible with subspace factors")
    if which == "span":
        return sub.u @ (sub.u.T @ m @ sub.v) @ sub.v.T
    if which == "complement":
        row_proj = sub.u @ (sub.u.T @ m)
        col_proj = (m @ sub.v) @ sub.v.T
        both = sub.u @ (sub.u.T @ m @ sub.v) @ sub.v.T
        return m - row_proj - col_proj + both
    raise ValueError(f"unknown projection {which!r}")


def decompose_2r(delta: np.ndarray, sub: SubspacePair) -> tuple[np.ndarray, np.ndarray]:
    """Split an error matrix against the target's rank-r subspace pair.

    Returns (low, perp): `perp` is the part whose rows and columns are both
    orthogonal to the target factors, and `low = delta - perp` collects the
    remaining blocks, which have rank at most twice the factor count.
    """
    perp = subspace_project(delta, sub, "complement")
    low = delta - perp
    return low, perp
