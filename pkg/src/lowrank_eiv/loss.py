"""Surrogate quadratic loss for corrupted covariates.

The estimator never sees the clean design.  Instead it works with a pair
(gamma, upsilon) of plug-in moment estimates chosen so that, in
expectation, gamma matches the clean Gram matrix and upsilon the clean
cross-moment:

    clean     gamma = Z'Z / N                   upsilon = Z'y / N
    additive  gamma = Z'Z / N - Sigma_w         upsilon = Z'y / N
    missing   gamma = Zt'Zt / N - rho * diag(Zt'Zt / N),  Zt = Z / (1 - rho)
                                                upsilon = Zt'y / N

The loss is the quadratic L(Theta) = 0.5 <gamma vec(Theta), vec(Theta)>
- <upsilon, vec(Theta)> (the constant 0.5 ||y||^2 / N is dropped).  For
corrupted covariates gamma need not be positive semidefinite, which is why
curvature only holds locally (LSC, with a nuclear-norm slack) or on a cone
(RSC); both conditions get empirical verifiers here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substream
from .simulate import CovarianceSpec, ObservationSet
from .spectral import nuclear_norm, split_top

# materialize gamma up to this vectorized dimension; operator form beyond
MATERIALIZE_LIMIT = 4096


class SurrogatePair:
    """Immutable (gamma, upsilon) pair, materialized or matrix-free.

    `apply` and `quad` evaluate gamma's action either way; `dense_gamma`
    assembles the full matrix (cheap at desk scale, also used by tests to
    cross-check the operator form).
    """

    def __init__(self, *, regime, d1, d2, n, upsilon, gamma=None, z_flat=None,
                 sigma_w=None, rho=0.0, diag_correction=None):
        self.regime = regime
        self.d1 = d1
        self.d2 = d2
        self.n = n
        self.upsilon = upsilon
        self._gamma = gamma
        self._z_flat = z_flat
        self._sigma_w = sigma_w
        self._rho = rho
        self._diag_correction = diag_correction
        if gamma is None and z_flat is None:
            raise ValueError("need either a dense gamma or covariate data")

    @classmethod
    def from_dense(cls, gamma, upsilon, d1, d2, regime="clean", n=0):
        gamma = np.asarray(gamma, dtype=float)
        upsilon = np.asarray(upsilon, dtype=float)
        if gamma.shape != (d1 * d2, d1 * d2) or upsilon.shape != (d1 * d2,):
            raise ValueError("gamma/upsilon shapes inconsistent with d1 * d2")
        return cls(regime=regime, d1=d1, d2=d2, n=n, upsilon=upsilon, gamma=gamma)

    @property
    def dim(self) -> int:
        return self.d1 * self.d2

    @property
    def materialized(self) -> bool:
        return self._gamma is not None

    def apply(self, v: np.ndarray) -> np.ndarray:
        """gamma @ v without requiring the dense matrix."""
        if self._gamma is not None:
            return self._gamma @ v
        out = self._z_flat.T @ (self._z_flat @ v) / self.n
        if self._sigma_w is not None:
            out -= self._sigma_w.apply(v)
        if self._diag_correction is not None:
            out -= self._diag_correction * v
        return out

    def quad(self, v: np.ndarray) -> float:
        """Quadratic form v' gamma v."""
        if self._gamma is not None:
            return float(v @ (self._gamma @ v))
        zv = self._z_flat @ v
        out = zv @ zv / self.n
        if self._sigma_w is not None:
            out -= v @ self._sigma_w.apply(v)
        if self._diag_correction is not None:
            out -= self._diag_correction @ (v * v)
        return float(out)

    def dense_gamma(self) -> np.ndarray:
        if self._gamma is not None:
            return self._gamma
        gram = self._z_flat.T @ self._z_flat / self.n
        if self._sigma_w is not None:
            gram -= self._sigma_w.dense()
        if self._diag_correction is not None:
            gram[np.diag_indices_from(gram)] -= self._diag_correction
        return gram

    def operator_norm_estimate(self, iters: int = 200) -> float:
        """Power-iteration estimate of ||gamma||_op (deterministic probe)."""
        rng = substream(0, "gamma-power-probe")
        v = rng.standard_normal(self.dim)
        v /= np.linalg.norm(v)
        est = 0.0
        for _ in range(iters):
            w = self.apply(v)
            est = float(np.linalg.norm(w))
            if est == 0.0:
                return 0.0
            v = w / est
        return est


def build_surrogate(obs: ObservationSet, materialize: bool | None = None) -> SurrogatePair:
    """Construct the regime-appropriate (gamma, upsilon) from observations.

    `materialize` defaults to dimension <= MATERIALIZE_LIMIT; pass False to
    force the matrix-free form (memory stays O(N M)).
    """
    d1, d2 = obs.dims
    m = d1 * d2
    if materialize is None:
        materialize = m <= MATERIALIZE_LIMIT
    z_flat = obs.z.reshape(obs.n, m)

    if obs.corruption == "missing":
        z_flat = z_flat / (1.0 - obs.rho)
        regime = "missing"
        diag = obs.rho * np.einsum("ij,ij->j", z_flat, z_flat) / obs.n
        sigma_w = None
    elif obs.corruption == "additive":
        regime = "additive"
        diag = None
        sigma_w = obs.sigma_w
    else:
        regime = "clean"
        diag = None
        sigma_w = None

    upsilon = z_flat.T @ obs.y / obs.n
    pair = SurrogatePair(
        regime=regime, d1=d1, d2=d2, n=obs.n, upsilon=upsilon,
        z_flat=z_flat, sigma_w=sigma_w, rho=obs.rho, diag_correction=diag,
    )
    if not materialize:
        return pair
    return SurrogatePair(
        regime=regime, d1=d1, d2=d2, n=obs.n, upsilon=upsilon,
        gamma=pair.dense_gamma(), rho=obs.rho,
    )


def loss_value(pair: SurrogatePair, theta: np.ndarray) -> float:
    v = theta.ravel()
    return 0.5 * pair.quad(v) - float(pair.upsilon @ v)


def loss_grad(pair: SurrogatePair, theta: np.ndarray) -> np.ndarray:
    v = theta.ravel()
    return (pair.apply(v) - pair.upsilon).reshape(pair.d1, pair.d2)


# ---------------------------------------------------------------------------
# empirical curvature verification

# margins below this count as violations (roundoff guard on exact-zero cases)
_MARGIN_TOL = 1e-10


@dataclass(frozen=True)
class CurvatureReport:
    trials: int
    violations: int
    margins: np.ndarray


def _direction(rng: np.random.Generator, d1: int, d2: int, family: int) -> np.ndarray:
    d = min(d1, d2)
    if family == 0:  # dense Gaussian
        delta = rng.standard_normal((d1, d2))
    elif family == 1:  # low-rank product
        k = int(rng.integers(1, max(d // 2, 1) + 1))
        delta = rng.standard_normal((d1, k)) @ rng.standard_normal((k, d2))
    else:  # sparse spectrum: few spikes on random orthonormal directions
        k = int(rng.integers(1, d + 1))
        u, _ = np.linalg.qr(rng.standard_normal((d1, k)))
        v, _ = np.linalg.qr(rng.standard_normal((d2, k)))
        s = np.zeros(k)
        live = rng.integers(0, k, size=max(1, k // 2 + 1))
        s[live] = rng.uniform(0.5, 3.0, live.size)
        delta = (u * s) @ v.T
    scale = rng.uniform(0.1, 3.0)
    return scale * delta


def cone_direction(rng: np.random.Generator, d1: int, d2: int, r: int) -> np.ndarray:
    """Random direction inside the cone: tail nuclear mass at most 7x head."""
    delta = rng.standard_normal((d1, d2))
    head, tail = split_top(delta, r)
    hn, tn = nuclear_norm(head), nuclear_norm(tail)
    if tn > 7.0 * hn:
        tail = tail * rng.uniform(0.2, 1.0) * (7.0 * hn / tn)
    return head + tail


def verify_lsc(
    pair: SurrogatePair,
    theta_star: np.ndarray,
    trials: int,
    alpha1: float,
    tau1: float,
    seed=0,
    extra_directions=None,
) -> CurvatureReport:
    """Check <grad L(T* + D) - grad L(T*), D> >= alpha1 ||D||_F^2 - tau1 ||D||_*^2
    over random directions from three families (dense, low-rank, sparse
    spectrum), plus any caller-supplied directions appended at the end."""
    rng = substream(seed, "lsc")
    base_grad = loss_grad(pair, theta_star)
    directions = [_direction(rng, pair.d1, pair.d2, t % 3) for t in range(trials)]
    directions += [np.asarray(d, dtype=float) for d in (extra_directions or [])]
    margins = np.empty(len(directions))
    for t, delta in enumerate(directions):
        lhs = float(np.sum((loss_grad(pair, theta_star + delta) - base_grad) * delta))
        rhs = alpha1 * float(np.sum(delta * delta)) - tau1 * nuclear_norm(delta) ** 2
        margins[t] = lhs - rhs
    violations = int(np.count_nonzero(margins < -_MARGIN_TOL))
    return CurvatureReport(trials=len(directions), violations=violations, margins=margins)


def verify_rsc(
    pair: SurrogatePair,
    trials: int,
    alpha2: float,
    r: int,
    seed=0,
    extra_directions=None,
) -> CurvatureReport:
    """Check L(T + D) - L(T) - <grad L(T), D> >= alpha2 ||D||_F^2 for
    directions drawn inside the cone (tail mass <= 7x head mass)."""
    rng = substream(seed, "rsc")
    directions = [cone_direction(rng, pair.d1, pair.d2, r) for _ in range(trials)]
    directions += [np.asarray(d, dtype=float) for d in (extra_directions or [])]
    margins = np.empty(len(directions))
    for t, delta in enumerate(directions):
        theta = rng.standard_normal((pair.d1, pair.d2))
        lhs = (
            loss_value(pair, theta + delta)
            - loss_value(pair, theta)
            - float(np.sum(loss_grad(pair, theta) * delta))
        )
        margins[t] = lhs - alpha2 * float(np.sum(delta * delta))
    violations = int(np.count_nonzero(margins < -_MARGIN_TOL))
    return CurvatureReport(trials=len(directions), violations=violations, margins=margins)


# ---------------------------------------------------------------------------
# oracle bound quantities


@dataclass(frozen=True)
class BoundQuantities:
    tau: float
    phi: float
    lambda_floor: float


def bound_quantities(
    regime: str,
    sigma_x: CovarianceSpec,
    sigma_eps: float,
    theta_star: np.ndarray,
    n: int,
    omega: float,
    sigma_w: CovarianceSpec | None = None,
    rho: float = 0.0,
    constant: float = 1.0,
) -> BoundQuantities:
    """Corruption-level constants and the induced penalty-level floor.

    tau scales the nuclear-slack term in the curvature bounds, phi the
    gradient deviation; the floor is
    constant * max(phi * sqrt(log dt / n), omega * tau * dt * log dt / n)
    with dt the larger matrix dimension.  The clean regime is the additive
    formula with zero noise level.
    """
    x_min = sigma_x.lambda_min
    x_op = sigma_x.op_norm
    fro = float(np.linalg.norm(theta_star))
    if regime in ("clean", "additive"):
        w_op = sigma_w.op_norm if sigma_w is not None else 0.0
        tau = x_min * max((x_op**2 + w_op**2) / x_min**2, 1.0)
        phi = (x_op + w_op) * (x_op + sigma_eps) * fro
    elif regime == "missing":
        if not 0.0 <= rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        eff = x_op / (1.0 - rho)
        tau = x_min * max(x_op**4 / ((1.0 - rho) ** 4 * x_min**2), 1.0)
        phi = eff * (eff + sigma_eps) * fro
    else:
        raise ValueError(f"unknown regime {regime!r}")
    d_tilde = max(theta_star.shape)
    log_d = np.log(d_tilde)
    floor = constant * max(phi * np.sqrt(log_d / n), omega * tau * d_tilde * log_d / n)
    return BoundQuantities(tau=tau, phi=phi, lambda_floor=float(floor))
