"""Diagnostics: spectrum classification, gradient-norm measurement,
randomized regularity checks, and recovery-error reporting.

The randomized checks in :func:`check_structure` validate the structural
inequalities the estimator's guarantees rest on — penalty subadditivity
over spectra, curvature bounds on the concave component, the low-rank /
orthogonal error split, and the penalty-difference cone bound — by
sampling random matrices and regularizers and counting violations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import SurrogatePair, loss_grad
from .regularizers import RegularizerSpec
from .rng import substream
from .simulate import TrueModel, gen_true_low_rank
from .spectral import (
    SubspacePair,
    decompose_2r,
    nuclear_norm,
    numerical_rank,
    spectral_concave,
    spectral_concave_grad,
    spectral_penalty,
    split_top,
)

# reported numerical rank uses a looser relative cutoff than the exact
# linear-algebra helpers: solver output carries O(tol) noise in the
# small singular values
REPORT_RANK_TOL = 1e-6

_CHECK_NAMES = (
    "penalty_subadditive",
    "concave_regularity",
    "error_split_rank",
    "penalty_split_bound",
)


@dataclass(frozen=True)
class SpectrumSplit:
    """Indices of true singular values above/below the regularizer threshold."""

    j1: tuple[int, ...]
    j2: tuple[int, ...]
    r1: int
    r2: int


@dataclass(frozen=True)
class GradientNorms:
    """Operator norms of the loss gradient at the truth, full and compressed.

    ``projected_defined`` is False when the above-threshold subspace is
    empty (r1 = 0); the projected norm is then reported as 0.
    """

    full: float
    projected: float
    projected_defined: bool


@dataclass(frozen=True)
class StructureReport:
    trials: int
    violations: dict[str, int]
    worst: dict[str, float]

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())


@dataclass(frozen=True)
class RecoveryReport:
    """Per-solve recovery metrics against a known ground truth."""

    frob_error: float
    nuclear_error: float
    rank_hat: int
    r1: int
    r2: int
    op_norm_full_grad: float
    op_norm_proj_grad: float
    cone_ratio: float


@dataclass(frozen=True)
class BoundEvaluation:
    frob_error: float
    bound_rhs: float
    ratio: float


def classify_spectrum(
    model: TrueModel, spec: RegularizerSpec, threshold: str = "nu"
) -> SpectrumSplit:
    """Partition the true spectrum at the regularizer threshold.

    ``threshold="nu"`` (default) splits at the flat-region onset, where
    the penalty derivative vanishes; ``"mu"`` splits at the curvature
    modulus instead.
    """
    if model.spectrum.size == 0:
        raise ValueError("model spectrum is empty")
    if threshold == "nu":
        cut = spec.nu
    elif threshold == "mu":
        cut = spec.mu
    else:
        raise ValueError(f"threshold must be 'nu' or 'mu', got {threshold!r}")
    above = model.spectrum >= cut
    j1 = tuple(int(j) for j in np.nonzero(above)[0])
    j2 = tuple(int(j) for j in np.nonzero(~above)[0])
    return SpectrumSplit(j1, j2, len(j1), len(j2))


def measure_gradient_norms(pair: SurrogatePair, model: TrueModel, r1: int) -> GradientNorms:
    """Operator norm of the loss gradient at the truth, and of its
    compression onto the top-r1 singular subspaces of the truth."""
    if not 0 <= r1 <= model.rank:
        raise ValueError(f"r1 must lie in [0, {model.rank}], got {r1}")
    grad = loss_grad(pair, model.theta)
    full = float(np.linalg.norm(grad, 2))
    if r1 == 0:
        return GradientNorms(full, 0.0, False)
    compressed = model.u[:, :r1].T @ grad @ model.v[:, :r1]
    return GradientNorms(full, float(np.linalg.norm(compressed, 2)), True)


# --------------------------------------------------------- structural checks


def penalty_subadditivity_margins(spec, a, b):
    """Violation amounts for spectral-penalty subadditivity (≤ 0 when it holds)."""
    pa = spectral_penalty(a, spec)
    pb = spectral_penalty(b, spec)
    plus = spectral_penalty(a + b, spec) - pa - pb
    minus = pa - pb - spectral_penalty(a - b, spec)
    return plus, minus


def concave_regularity_margins(spec, a, b):
    """Violation amounts for the four curvature relations of the concave
    component: gradient monotone-defect bounds and the matching upper and
    lower tangent bounds (all ≤ 0 when they hold)."""
    diff = a - b
    sq = float(np.sum(diff * diff))
    ga = spectral_concave_grad(a, spec)[0]
    gb = spectral_concave_grad(b, spec)[0]
    inner = float(np.sum((ga - gb) * diff))
    qa = spectral_concave(a, spec)
    qb = spectral_concave(b, spec)
    tangent = qb + float(np.sum(gb * diff))
    return (
        -spec.mu * sq - inner,
        inner,
        tangent - 0.5 * spec.mu * sq - qa,
        qa - tangent,
    )


def penalty_split_margin(spec, theta_star, theta, r):
    """Violation amount for the penalty-difference cone bound: with the
    error split at its top 2r singular values, the penalty drop from the
    truth is controlled by head minus tail nuclear mass (≤ 0 when it holds)."""
    delta = theta - theta_star
    head, tail = split_top(delta, r)
    rhs = spec.lam * (nuclear_norm(head) - nuclear_norm(tail))
    return spectral_penalty(theta_star, spec) - spectral_penalty(theta, spec) - rhs


def _random_spec(rng) -> RegularizerSpec:
    lam = float(rng.uniform(0.1, 2.0))
    if rng.integers(2) == 0:
        return RegularizerSpec.scad(lam, float(rng.uniform(2.5, 4.5)))
    return RegularizerSpec.mcp(lam, float(rng.uniform(1.5, 4.0)))


def check_structure(trials: int, seed: int = 0, tol: float = 1e-8) -> StructureReport:
    """Randomized validation of the four structural inequalities.

    Runs ``trials`` independent samples per check on matrices up to 8x6
    with randomly drawn folded-concave regularizers, and counts
    violations beyond ``tol``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = substream(seed, "structure-checks")
    violations = {name: 0 for name in _CHECK_NAMES}
    worst = {name: -np.inf for name in _CHECK_NAMES}

    def record(name, margin):
        worst[name] = max(worst[name], margin)
        if margin > tol:
            violations[name] += 1

    for _ in range(trials):
        d1 = int(rng.integers(2, 9))
        d2 = int(rng.integers(2, 7))
        spec = _random_spec(rng)
        scale = float(rng.choice([0.1, 1.0, 3.0]))
        a = scale * rng.standard_normal((d1, d2))
        b = scale * rng.standard_normal((d1, d2))

        record("penalty_subadditive", max(penalty_subadditivity_margins(spec, a, b)))
        record("concave_regularity", max(concave_regularity_margins(spec, a, b)))

        r = int(rng.integers(1, max(min(d1, d2) // 2, 1) + 1))
        spectrum = np.sort(rng.uniform(0.2, 5.0, size=r))[::-1]
        model = gen_true_low_rank(d1, d2, r, spectrum, int(rng.integers(2**31)))

        low, perp = decompose_2r(a, SubspacePair(model.u, model.v))
        rank_excess = numerical_rank(low) - 2 * r
        recon = float(np.linalg.norm(low + perp - a))
        decomp = abs(
            nuclear_norm(model.theta + perp) - model.nuclear_norm - nuclear_norm(perp)
        )
        record("error_split_rank", max(float(rank_excess), recon, decomp))

        record("penalty_split_bound", penalty_split_margin(spec, model.theta, model.theta + b, r))

    return StructureReport(trials, violations, worst)


# ---------------------------------------------------------------- reporting


def recovery_report(
    theta_hat: np.ndarray,
    model: TrueModel,
    pair: SurrogatePair,
    spec: RegularizerSpec,
    threshold: str = "nu",
) -> RecoveryReport:
    """Assemble recovery metrics for one solve against the ground truth."""
    delta = theta_hat - model.theta
    split = classify_spectrum(model, spec, threshold)
    norms = measure_gradient_norms(pair, model, split.r1)
    head, tail = split_top(delta, model.rank)
    head_mass = nuclear_norm(head)
    tail_mass = nuclear_norm(tail)
    if head_mass > 0.0:
        cone_ratio = tail_mass / head_mass
    else:
        cone_ratio = 0.0 if tail_mass == 0.0 else np.inf
    return RecoveryReport(
        frob_error=float(np.linalg.norm(delta)),
        nuclear_error=nuclear_norm(delta),
        rank_hat=numerical_rank(theta_hat, rel_tol=REPORT_RANK_TOL),
        r1=split.r1,
        r2=split.r2,
        op_norm_full_grad=norms.full,
        op_norm_proj_grad=norms.projected,
        cone_ratio=float(cone_ratio),
    )


def evaluate_bound(
    report: RecoveryReport, spec: RegularizerSpec, alpha2: float
) -> BoundEvaluation:
    """Compare a measured error against the stationary-point bound shape.

    The bound is sqrt(r1)/(2*alpha2 - mu) times the projected gradient
    norm plus 5*sqrt(r2)*lambda/(2*(2*alpha2 - mu)); it requires
    2*alpha2 > mu.  The ratio is informational — alpha2 is itself an
    estimate, so callers log rather than assert it.
    """
    denom = 2.0 * alpha2 - spec.mu
    if denom <= 0.0:
        raise ValueError(
            f"curvature margin must exceed the concavity modulus: 2*{alpha2} <= {spec.mu}"
        )
    rhs = (
        np.sqrt(report.r1) / denom * report.op_norm_proj_grad
        + 5.0 * np.sqrt(report.r2) * spec.lam / (2.0 * denom)
    )
    if rhs > 0.0:
        ratio = report.frob_error / rhs
    else:
        ratio = 0.0 if report.frob_error == 0.0 else np.inf
    return BoundEvaluation(report.frob_error, float(rhs), float(ratio))
