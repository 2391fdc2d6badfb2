"""Scalar folded-concave penalties and their proximal maps.

Three penalty families on scalars, applied downstream to singular values:
nuclear (plain absolute value), SCAD, and MCP.  Each penalty p decomposes
as ``p(t) = lam * |t| + q(t)`` where q is a nonpositive, weakly concave
remainder whose derivative is mu-Lipschitz and bounded by lam.  SCAD and
MCP are constant beyond ``nu``, which removes shrinkage bias for large
entries; the nuclear penalty has ``q = 0`` and ``nu = inf``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("nuclear", "scad", "mcp")


class StepSizeError(ValueError):
    """Raised when a prox step would destroy strong convexity (step * mu >= 1)."""


@dataclass(frozen=True)
class RegularizerSpec:
    """Penalty family with level `lam` and shape parameter.

    `shape` is the SCAD `a` (> 2) or MCP `b` (> 0); it is ignored for the
    nuclear penalty.  `mu` is the weak-concavity constant of the remainder
    q, and `nu` the point beyond which the penalty is flat.
    """

    kind: str
    lam: float
    shape: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if not np.isfinite(self.lam) or self.lam < 0.0:
            raise ValueError("penalty level lam must be finite and >= 0")
        if self.kind == "scad" and not self.shape > 2.0:
            raise ValueError("SCAD shape must satisfy a > 2")
        if self.kind == "mcp" and not self.shape > 0.0:
            raise ValueError("MCP shape must satisfy b > 0")

    @classmethod
    def nuclear(cls, lam: float) -> "RegularizerSpec":
        return cls(kind="nuclear", lam=lam)

    @classmethod
    def scad(cls, lam: float, a: float = 3.7) -> "RegularizerSpec":
        return cls(kind="scad", lam=lam, shape=a)

    @classmethod
    def mcp(cls, lam: float, b: float = 2.0) -> "RegularizerSpec":
        return cls(kind="mcp", lam=lam, shape=b)

    @property
    def mu(self) -> float:
        if self.kind == "scad":
            return 1.0 / (self.shape - 1.0)
        if self.kind == "mcp":
            return 1.0 / self.shape
        return 0.0

    @property
    def nu(self) -> float:
        if self.kind == "nuclear":
            return np.inf
        return self.shape * self.lam


def _as_array(t):
    arr = np.asarray(t, dtype=float)
    return arr, arr.ndim == 0


def _ret(out, scalar):
    return float(out) if scalar else out


def penalty(t, spec: RegularizerSpec):
    """Evaluate p(t) elementwise.

    Parameters
    ----------
    t : float or ndarray
    spec : RegularizerSpec

    Returns
    -------
    float or ndarray, same shape as `t`.
    """
    arr, scalar = _as_array(t)
    u = np.abs(arr)
    lam, a = spec.lam, spec.shape
    if spec.kind == "nuclear":
        out = lam * u
    elif spec.kind == "scad":
        out = np.where(
            u <= lam,
            lam * u,
            np.where(
                u <= a * lam,
                (2.0 * a * lam * u - u * u - lam * lam) / (2.0 * (a - 1.0)),
                (a + 1.0) * lam * lam / 2.0,
            ),
        )
    else:
        b = a
        out = np.where(u <= b * lam, lam * u - u * u / (2.0 * b), b * lam * lam / 2.0)
    return _ret(out, scalar)


def penalty_deriv(t, spec: RegularizerSpec):
    """Derivative p'(t) elementwise; at t = 0 returns 0 (the symmetric value).

    The one-sided limit of p' at 0+ is lam for every family.
    """
    arr, scalar = _as_array(t)
    u = np.abs(arr)
    s = np.sign(arr)
    lam, a = spec.lam, spec.shape
    if spec.kind == "nuclear":
        out = s * lam
    elif spec.kind == "scad":
        out = s * np.where(
            u <= lam,
            lam,
            np.where(u <= a * lam, (a * lam - u) / (a - 1.0), 0.0),
        )
    else:
        b = a
        out = s * np.where(u <= b * lam, lam - u / b, 0.0)
    return _ret(out, scalar)


def concave_part(t, spec: RegularizerSpec):
    """The remainder q(t) = p(t) - lam * |t|, evaluated by its closed form."""
    arr, scalar = _as_array(t)
    u = np.abs(arr)
    lam, a = spec.lam, spec.shape
    if spec.kind == "nuclear":
        out = np.zeros_like(u)
    elif spec.kind == "scad":
        out = np.where(
            u <= lam,
            0.0,
            np.where(
                u <= a * lam,
                -((u - lam) ** 2) / (2.0 * (a - 1.0)),
                (a + 1.0) * lam * lam / 2.0 - lam * u,
            ),
        )
    else:
        b = a
        out = np.where(u <= b * lam, -u * u / (2.0 * b), b * lam * lam / 2.0 - lam * u)
    return _ret(out, scalar)


def concave_part_deriv(t, spec: RegularizerSpec):
    """Derivative q'(t); continuous everywhere with q'(0) = 0 and |q'| <= lam."""
    arr, scalar = _as_array(t)
    u = np.abs(arr)
    s = np.sign(arr)
    lam, a = spec.lam, spec.shape
    if spec.kind == "nuclear":
        out = np.zeros_like(u)
    elif spec.kind == "scad":
        out = s * np.where(
            u <= lam,
            0.0,
            np.where(u <= a * lam, -(u - lam) / (a - 1.0), -lam),
        )
    else:
        b = a
        out = s * np.where(u <= b * lam, -u / b, -lam)
    return _ret(out, scalar)


def prox(v, spec: RegularizerSpec, step: float = 1.0):
    """Minimize 0.5 * (t - v)^2 + step * p(t) over t, elementwise.

    Requires ``step * mu < 1`` so the objective is strongly convex and the
    minimizer unique.  Candidate minimizers are computed per region of the
    penalty, clamped to their region, and the true objective decides.
    """
    if step <= 0.0:
        raise ValueError("prox step must be positive")
    if step * spec.mu >= 1.0:
        raise StepSizeError(f"step {step} too large: step * mu = {step * spec.mu} >= 1")
    arr, scalar = _as_array(v)
    u = np.abs(arr)
    s = np.sign(arr)
    lam, a = spec.lam, spec.shape
    if spec.kind == "nuclear":
        return _ret(s * np.maximum(u - step * lam, 0.0), scalar)
    if spec.kind == "scad":
        cands = np.stack(
            [
                np.clip(u - step * lam, 0.0, lam),
                np.clip(((a - 1.0) * u - step * a * lam) / (a - 1.0 - step), lam, a * lam),
                np.maximum(u, a * lam),
            ]
        )
    else:
        b = a
        cands = np.stack(
            [
                np.clip((u - step * lam) / (1.0 - step / b), 0.0, b * lam),
                np.maximum(u, b * lam),
            ]
        )
    objs = 0.5 * (cands - u) ** 2 + step * penalty(cands, spec)
    pick = np.take_along_axis(cands, np.argmin(objs, axis=0)[None], axis=0)[0]
    return _ret(s * pick, scalar)
