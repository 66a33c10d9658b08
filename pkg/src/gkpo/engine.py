"""Objective evaluation and decision statistics.

Losses are evaluated as loss(link(beta * margin)). Links and losses accept
scalars or numpy arrays. The logistic loss uses the overflow-safe form
max(0, -z) + log1p(exp(-|z|)). Decisions are strict margin signs; a zero
margin is a zero decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .algebra import NormalForm, PairSample, margin as nf_margin
from .schema import GkpoObject, WeightSpec

LINKS = ("identity", "logistic", "tanh", "hinge")
LOSSES = ("logistic", "bce", "hinge", "mse")
# hinge is only weakly increasing; it is evaluatable but excluded from
# strict-monotonicity (order-preservation) claims.
STRICT_LINKS = frozenset({"identity", "logistic", "tanh"})

# Keys under which per-prompt / per-dataset reference values travel in
# PairSample.delta_ref when an object's reference form is not fixed.
PROMPT_OFFSET_KEY = "prompt_offset"
DATASET_OFFSET_KEY = "dataset_offset"


def link_value(kind: str, x):
    if kind == "identity":
        return x
    if kind == "logistic":
        return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))
    if kind == "tanh":
        return np.tanh(x)
    if kind == "hinge":
        return np.maximum(0.0, x)
    raise ValueError(f"link {kind!r} is not evaluatable")


def link_grad(kind: str, x):
    if kind == "identity":
        return np.ones_like(np.asarray(x, dtype=float))
    if kind == "logistic":
        s = link_value("logistic", x)
        return s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "hinge":
        return np.where(np.asarray(x, dtype=float) > 0.0, 1.0, 0.0)
    raise ValueError(f"link {kind!r} is not evaluatable")


def loss_value(kind: str, z):
    z = np.asarray(z, dtype=float)
    if kind == "logistic":
        return np.maximum(0.0, -z) + np.log1p(np.exp(-np.abs(z)))
    if kind == "bce":
        if np.any(z <= 0.0) or np.any(z >= 1.0):
            raise ValueError("bce loss requires link output strictly inside (0, 1)")
        return -np.log(z)
    if kind == "hinge":
        return np.maximum(0.0, 1.0 - z)
    if kind == "mse":
        return (z - 1.0) ** 2
    raise ValueError(f"loss {kind!r} is not evaluatable")


def loss_grad(kind: str, z):
    z = np.asarray(z, dtype=float)
    if kind == "logistic":
        return link_value("logistic", z) - 1.0
    if kind == "bce":
        if np.any(z <= 0.0) or np.any(z >= 1.0):
            raise ValueError("bce loss requires link output strictly inside (0, 1)")
        return -1.0 / z
    if kind == "hinge":
        return np.where(z < 1.0, -1.0, 0.0)
    if kind == "mse":
        return 2.0 * (z - 1.0)
    raise ValueError(f"loss {kind!r} is not evaluatable")


def objective(loss: str, link: str, beta: float, margin_value: float) -> float:
    if not beta > 0:
        raise ValueError("beta must be positive")
    return float(loss_value(loss, link_value(link, beta * margin_value)))


def decision(margin_value: float) -> int:
    if margin_value > 0:
        return 1
    if margin_value < 0:
        return -1
    return 0


# ---------------------------------------------------------------------------
# Linear scorers and gradients


@dataclass(frozen=True)
class LinearScorer:
    """Score model u(x, y) = theta . features[(prompt, side)], side in pos/neg."""

    theta: np.ndarray
    features: Mapping[tuple[str, str], np.ndarray]

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        feats = {k: np.asarray(v, dtype=float) for k, v in self.features.items()}
        for key, vec in feats.items():
            if vec.shape != theta.shape:
                raise ValueError(
                    f"feature vector for {key!r} has shape {vec.shape}, "
                    f"expected {theta.shape}"
                )
        object.__setattr__(self, "features", feats)

    def delta_features(self, prompt_id: str) -> np.ndarray:
        return self.features[(prompt_id, "pos")] - self.features[(prompt_id, "neg")]

    def delta_score(self, prompt_id: str) -> float:
        return float(self.theta @ self.delta_features(prompt_id))


def scored_sample(scorer: LinearScorer, sample: PairSample) -> PairSample:
    """The sample with the scorer's score gap added to its frozen delta_u."""
    return replace(
        sample, delta_u=sample.delta_u + scorer.delta_score(sample.prompt_id)
    )


def scorer_margin(scorer: LinearScorer, nf: NormalForm, sample: PairSample) -> float:
    return nf_margin(nf, scored_sample(scorer, sample))


def grad_objective(
    scorer: LinearScorer,
    nf: NormalForm,
    sample: PairSample,
    loss: str,
    link: str,
    beta: float,
    weight_spec: WeightSpec | None = None,
) -> np.ndarray:
    """Analytic d/dtheta of loss(link(beta * margin)).

    The margin is linear in theta with slope W * delta_features, where W is
    the realized weight (sample factors times an optional constant-form
    weight_spec). Score-dependent weights are refused: the weight then moves
    with theta and no fixed normal form captures the objective.
    """
    if weight_spec is not None and weight_spec.form == "score_dependent":
        raise ValueError(
            "score-dependent weight: gradient undefined for a fixed normal form"
        )
    w_extra = 1.0
    if weight_spec is not None and weight_spec.form == "constant":
        w_extra = float(weight_spec.constant)
    m = scorer_margin(scorer, nf, sample) * w_extra
    w_total = w_extra
    for name in nf.weight_factors:
        w_total *= sample.omega[name]
    z = beta * m
    g = link_value(link, z)
    coeff = float(loss_grad(loss, g)) * float(link_grad(link, z)) * beta * w_total
    return coeff * scorer.delta_features(sample.prompt_id)


# ---------------------------------------------------------------------------
# Object-level evaluation (GKPO object + realized sample)


def object_normal_form(obj: GkpoObject) -> NormalForm:
    coeffs: dict[str, float] = {}
    for p in obj.penalties:
        coeffs[p.name] = coeffs.get(p.name, 0.0) + p.coeff
    factors = obj.weight.factors if obj.weight.form == "product" else ()
    return NormalForm(coeffs, tuple(sorted(factors)), ())


def object_weight(obj: GkpoObject, sample: PairSample) -> float:
    if obj.weight.form == "constant":
        return float(obj.weight.constant)
    if obj.weight.form == "product":
        w = 1.0
        for name in sorted(obj.weight.factors):
            w *= sample.omega[name]
        return w
    raise ValueError(
        f"weight form {obj.weight.form!r} has no sample-level numeric value"
    )


def object_reference(obj: GkpoObject, sample: PairSample) -> float:
    """Fixed value, per-sample offset, or both summed with any named terms."""
    form = obj.reference.form
    if form in ("fixed_zero", "fixed_scalar"):
        return float(obj.reference.value)
    if form == "per_prompt":
        return float(sample.delta_ref[PROMPT_OFFSET_KEY])
    if form == "per_dataset":
        return float(sample.delta_ref.get(DATASET_OFFSET_KEY, 0.0))
    raise ValueError(f"reference form {form!r} has no sample-level numeric value")


def object_delta_score(
    obj: GkpoObject, sample: PairSample, scorer: LinearScorer | None = None
) -> float:
    gap = sample.delta_u
    if scorer is not None:
        gap += scorer.delta_score(sample.prompt_id)
    coeffs = object_normal_form(obj).penalty_coeffs
    for name in sorted(coeffs):
        gap -= coeffs[name] * sample.delta_phi[name]
    return gap


def object_margin(
    obj: GkpoObject, sample: PairSample, scorer: LinearScorer | None = None
) -> float:
    gap = object_delta_score(obj, sample, scorer)
    return (gap - object_reference(obj, sample)) * object_weight(obj, sample)


# ---------------------------------------------------------------------------
# Decision statistics


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> float:
    """Tie-corrected (tau-b) rank correlation over all pairs."""
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length 1-d sequences")
    n = len(x)
    if n < 2:
        raise ValueError("need at least two observations")
    iu = np.triu_indices(n, k=1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    concordant_minus_discordant = float(np.sum(sx * sy))
    n0 = n * (n - 1) / 2.0
    n1 = n0 - float(np.sum(sx != 0))  # pairs tied in x
    n2 = n0 - float(np.sum(sy != 0))  # pairs tied in y
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0.0:
        raise ValueError("kendall tau undefined: one input is entirely tied")
    return concordant_minus_discordant / denom


def mcnemar_exact(n01: int, n10: int) -> float:
    """Exact two-sided binomial test on discordant counts; p = 1 when none."""
    if n01 < 0 or n10 < 0:
        raise ValueError("counts must be nonnegative")
    n = n01 + n10
    if n == 0:
        return 1.0
    k = min(n01, n10)
    tail = sum(math.comb(n, i) for i in range(k + 1))
    p = 2 * tail / (1 << n)
    return min(1.0, p)


def bootstrap_ci(
    values: Sequence[float], resamples: int = 1000, seed: int = 0
) -> tuple[float, float]:
    """Seeded percentile bootstrap (2.5%, 97.5%) for the mean of values."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("values must be nonempty")
    if resamples < 100:
        raise ValueError("resamples must be at least 100")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(resamples, arr.size))
    means = arr[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(lo), float(hi)


def bootstrap_diff_ci(
    values_a: Sequence[float],
    values_b: Sequence[float],
    resamples: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile CI for mean(values_a) - mean(values_b) over paired resamples."""
    a = np.asarray(values_a, dtype=float)
    b = np.asarray(values_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired inputs must have equal length")
    return bootstrap_ci(a - b, resamples=resamples, seed=seed)
