"""Synthetic data for errors-in-variables trace regression.

The model: responses y_i = <<X_i, Theta*>> + eps_i where Theta* is low
rank, vec(X_i) is a zero-mean Gaussian with covariance Sigma_x, and the
covariates are observed either exactly, through additive matrix noise
Z = X + W, or with entries missing completely at random (stored as zeros
plus a mask).  Vectorization is row-major throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .rng import substream

CORRUPTIONS = ("none", "additive", "missing")

# per-observation stream tags
_T_MODEL = "model"
_T_DESIGN = "design"
_T_NOISE = "noise"
_T_WNOISE = "wnoise"
_T_MASK = "mask"

_DATASET_FORMAT = "lowrank-eiv-dataset"
_DATASET_VERSION = 1


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """SPD covariance for vectorized covariates: scale * base, where base is
    the identity, an AR(1) correlation matrix, or an explicit matrix."""

    kind: str
    dim: int
    scale: float = 1.0
    phi: float = 0.0
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "ar1", "explicit"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if not np.isfinite(self.scale) or self.scale <= 0.0:
            raise ValueError("scale must be positive")
        if self.kind == "ar1" and not abs(self.phi) < 1.0:
            raise ValueError("AR(1) coefficient must satisfy |phi| < 1")
        if self.kind == "explicit":
            m = self.matrix
            if m is None or m.shape != (self.dim, self.dim):
                raise ValueError("explicit covariance needs a dim x dim matrix")
            if np.max(np.abs(m - m.T)) > 1e-10 * max(1.0, np.max(np.abs(m))):
                raise ValueError("explicit covariance must be symmetric")
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError:
                raise ValueError("explicit covariance must be positive definite") from None

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "CovarianceSpec":
        return cls(kind="identity", dim=dim, scale=scale)

    @classmethod
    def ar1(cls, dim: int, phi: float, scale: float = 1.0) -> "CovarianceSpec":
        return cls(kind="ar1", dim=dim, phi=phi, scale=scale)

    @classmethod
    def explicit(cls, matrix: np.ndarray, scale: float = 1.0) -> "CovarianceSpec":
        matrix = np.asarray(matrix, dtype=float)
        return cls(kind="explicit", dim=matrix.shape[0], scale=scale, matrix=matrix)

    def dense(self) -> np.ndarray:
        if self.kind == "identity":
            return self.scale * np.eye(self.dim)
        if self.kind == "ar1":
            idx = np.arange(self.dim)
            return self.scale * self.phi ** np.abs(idx[:, None] - idx[None, :])
        return self.scale * self.matrix

    @cached_property
    def _chol(self) -> np.ndarray | None:
        if self.kind == "identity":
            return None  # fast path: multiply by sqrt(scale)
        return np.linalg.cholesky(self.dense())

    @cached_property
    def _eig_range(self) -> tuple[float, float]:
        if self.kind == "identity":
            return self.scale, self.scale
        ev = np.linalg.eigvalsh(self.dense())
        return float(ev[0]), float(ev[-1])

    @property
    def lambda_min(self) -> float:
        return self._eig_range[0]

    @property
    def op_norm(self) -> float:
        return self._eig_range[1]

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return self.scale * v
        return self.dense() @ v

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        g = rng.standard_normal(self.dim)
        if self.kind == "identity":
            return np.sqrt(self.scale) * g
        return self._chol @ g

    def descriptor(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim, "scale": self.scale}
        if self.kind == "ar1":
            d["phi"] = self.phi
        return d


@dataclass(frozen=True, eq=False)
class TrueModel:
    """Ground-truth low-rank target with its SVD factors."""

    theta: np.ndarray
    rank: int
    spectrum: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def frob_norm(self) -> float:
        return float(np.linalg.norm(self.spectrum))

    @property
    def nuclear_norm(self) -> float:
        return float(self.spectrum.sum())


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Responses plus observed (possibly corrupted) covariates.

    For missing data, `z` holds zeros at masked positions and `mask` marks
    them; downstream code only ever sees `z`, `mask`, and `rho`.
    """

    y: np.ndarray
    z: np.ndarray
    corruption: str
    sigma_eps: float
    seed: int
    sigma_w: CovarianceSpec | None = None
    rho: float = 0.0
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.corruption not in CORRUPTIONS:
            raise ValueError(f"unknown corruption {self.corruption!r}")
        if self.y.ndim != 1 or self.y.shape[0] < 1:
            raise ValueError("need at least one observation")
        if self.z.ndim != 3 or self.z.shape[0] != self.y.shape[0]:
            raise ValueError("covariate stack must be (n, d1, d2) matching y")
        if self.corruption == "additive" and self.sigma_w is None:
            raise ValueError("additive corruption requires sigma_w")
        if self.corruption == "missing":
            if not 0.0 <= self.rho < 1.0:
                raise ValueError("rho must lie in [0, 1)")
            if self.mask is None or self.mask.shape != self.z.shape:
                raise ValueError("missing corruption requires a mask shaped like z")
            if np.any(self.z[self.mask] != 0.0):
                raise ValueError("masked entries must be stored as zeros")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.z.shape[1], self.z.shape[2]


def gen_true_low_rank(d1: int, d2: int, rank: int, spectrum, seed) -> TrueModel:
    """Low-rank target with Haar-random factors and the given spectrum.

    Deterministic given `seed`; the spectrum must be positive and sorted
    nonincreasing.
    """
    spectrum = np.asarray(spectrum, dtype=float)
    if rank < 1 or rank > min(d1, d2):
        raise ValueError("rank must satisfy 1 <= r <= min(d1, d2)")
    if spectrum.shape != (rank,):
        raise ValueError("spectrum length must equal rank")
    if np.any(spectrum <= 0.0):
        raise ValueError("spectrum must be positive")
    if np.any(np.diff(spectrum) > 0.0):
        raise ValueError("spectrum must be sorted nonincreasing")
    rng = substream(seed, _T_MODEL)
    u = _haar_factor(rng, d1, rank)
    v = _haar_factor(rng, d2, rank)
    theta = (u * spectrum) @ v.T
    return TrueModel(theta=theta, rank=rank, spectrum=spectrum, u=u, v=v)


def _haar_factor(rng, d, r):
    q, rr = np.linalg.qr(rng.standard_normal((d, r)))
    return q * np.sign(np.diag(rr))


def sample_design(n: int, d1: int, d2: int, sigma_x: CovarianceSpec, seed) -> np.ndarray:
    """n covariate matrices whose vectorizations are Sigma_x-Gaussian.

    Observation i draws from the stream (seed, "design", i), so the draw
    never depends on n or on which other observations are generated.
    """
    if n < 1:
        raise ValueError("need at least one observation")
    if sigma_x.dim != d1 * d2:
        raise ValueError("covariance dimension must equal d1 * d2")
    out = np.empty((n, d1, d2))
    for i in range(n):
        out[i] = sigma_x.draw(substream(seed, _T_DESIGN, i)).reshape(d1, d2)
    return out


def observe(x: np.ndarray, model: TrueModel, sigma_eps: float, seed) -> np.ndarray:
    """Responses y_i = <<X_i, Theta*>> + eps_i with independent Gaussian noise."""
    if sigma_eps < 0.0:
        raise ValueError("sigma_eps must be nonnegative")
    if x.shape[1:] != model.theta.shape:
        raise ValueError("covariate dimensions do not match the model")
    y = np.einsum("nij,ij->n", x, model.theta)
    if sigma_eps > 0.0:
        for i in range(x.shape[0]):
            y[i] += sigma_eps * substream(seed, _T_NOISE, i).standard_normal()
    return y


def corrupt_additive(x: np.ndarray, sigma_w: CovarianceSpec, seed) -> np.ndarray:
    """Observed covariates Z_i = X_i + W_i with Sigma_w-Gaussian noise."""
    n, d1, d2 = x.shape
    if sigma_w.dim != d1 * d2:
        raise ValueError("noise covariance dimension must equal d1 * d2")
    z = np.empty_like(x)
    for i in range(n):
        w = sigma_w.draw(substream(seed, _T_WNOISE, i)).reshape(d1, d2)
        z[i] = x[i] + w
    return z


def corrupt_missing(x: np.ndarray, rho: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Zero out each entry independently with probability rho.

    Returns (z, mask) with mask True at the removed positions.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    n, d1, d2 = x.shape
    mask = np.empty(x.shape, dtype=bool)
    for i in range(n):
        mask[i] = (substream(seed, _T_MASK, i).random(d1 * d2) < rho).reshape(d1, d2)
    z = np.where(mask, 0.0, x)
    return z, mask


def estimate_missing_rate(mask: np.ndarray) -> float:
    """Empirical missing fraction; provided as a utility, rho is assumed known."""
    return float(np.mean(mask))


def make_dataset(
    d1: int,
    d2: int,
    rank: int,
    spectrum,
    sigma_x: CovarianceSpec,
    corruption: str,
    sigma_w: CovarianceSpec | None,
    rho: float,
    sigma_eps: float,
    n: int,
    seed,
    model: TrueModel | None = None,
) -> tuple[ObservationSet, TrueModel]:
    """Full generation pipeline: target, design, responses, corruption."""
    if corruption not in CORRUPTIONS:
        raise ValueError(f"unknown corruption {corruption!r}")
    if corruption == "additive" and sigma_w is None:
        raise ValueError("additive corruption requires sigma_w")
    if model is None:
        model = gen_true_low_rank(d1, d2, rank, spectrum, seed)
    x = sample_design(n, d1, d2, sigma_x, seed)
    y = observe(x, model, sigma_eps, seed)
    mask = None
    if corruption == "additive":
        z = corrupt_additive(x, sigma_w, seed)
    elif corruption == "missing":
        z, mask = corrupt_missing(x, rho, seed)
    else:
        z = x
    obs = ObservationSet(
        y=y,
        z=z,
        corruption=corruption,
        sigma_eps=sigma_eps,
        seed=int(seed),
        sigma_w=sigma_w if corruption == "additive" else None,
        rho=rho if corruption == "missing" else 0.0,
        mask=mask,
    )
    return obs, model


# ---------------------------------------------------------------------------
# dataset files: an npz container holding a JSON header plus row-major arrays


def save_dataset(path, obs: ObservationSet, model: TrueModel) -> None:
    """Write observations and the true-model sidecar; round trip is bit-exact."""
    header = {
        "format": _DATASET_FORMAT,
        "version": _DATASET_VERSION,
        "d1": obs.dims[0],
        "d2": obs.dims[1],
        "n": obs.n,
        "corruption": obs.corruption,
        "rho": obs.rho,
        "sigma_eps": obs.sigma_eps,
        "seed": obs.seed,
        "rank": model.rank,
        "sigma_w": obs.sigma_w.descriptor() if obs.sigma_w is not None else None,
    }
    arrays = {
        "header": np.array(json.dumps(header)),
        "y": obs.y,
        "z": obs.z,
        "model_theta": model.theta,
        "model_spectrum": model.spectrum,
        "model_u": model.u,
        "model_v": model.v,
    }
    if obs.mask is not None:
        arrays["mask"] = obs.mask
    if obs.sigma_w is not None and obs.sigma_w.kind == "explicit":
        arrays["sigma_w_matrix"] = obs.sigma_w.matrix
    np.savez(path, **arrays)


def load_dataset(path) -> tuple[ObservationSet, TrueModel]:
    with np.load(path) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != _DATASET_FORMAT:
            raise ValueError("not a dataset file")
        sigma_w = None
        if header["sigma_w"] is not None:
            desc = header["sigma_w"]
            if desc["kind"] == "explicit":
                sigma_w = CovarianceSpec.explicit(data["sigma_w_matrix"], scale=desc["scale"])
            elif desc["kind"] == "ar1":
                sigma_w = CovarianceSpec.ar1(desc["dim"], phi=desc["phi"], scale=desc["scale"])
            else:
                sigma_w = CovarianceSpec.identity(desc["dim"], scale=desc["scale"])
        obs = ObservationSet(
            y=data["y"],
            z=data["z"],
            corruption=header["corruption"],
            sigma_eps=header["sigma_eps"],
            seed=header["seed"],
            sigma_w=sigma_w,
            rho=header["rho"],
            mask=data["mask"] if "mask" in data else None,
        )
        model = TrueModel(
            theta=data["model_theta"],
            rank=header["rank"],
            spectrum=data["model_spectrum"],
            u=data["model_u"],
            v=data["model_v"],
        )
    return obs, model
