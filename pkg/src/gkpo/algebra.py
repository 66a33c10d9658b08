"""Ladders of margin operators and their collected normal form.

An objective is written as an ordered ladder of three primitive operators
applied to the base pair (score gap, weight 1): additive penalties subtract
coefficient-weighted penalty gaps from the score side, multiplicative weights
multiply named positive factors onto the weight side, and reference adjusts
accumulate named reference terms. Collection folds any ladder into a normal
form in one pass; margins evaluated through either route coincide.

The normal-form `scale` field carries an applied scale-equivalence constant c.
It multiplies the score side and divides the weight side simultaneously, so
`margin()` is invariant to it by construction; `delta_score()` and `weight()`
expose the two scaled views separately.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping


@dataclass(frozen=True)
class AdditivePenalty:
    coeff: float
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("penalty name must be nonempty")


@dataclass(frozen=True)
class MultiplicativeWeight:
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("weight factor name must be nonempty")


@dataclass(frozen=True)
class ReferenceAdjust:
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("reference term name must be nonempty")


Operator = AdditivePenalty | MultiplicativeWeight | ReferenceAdjust


@dataclass(frozen=True)
class Ladder:
    ops: tuple[Operator, ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))


@dataclass(frozen=True)
class PairSample:
    """Realized quantities for one preference pair.

    delta_u is the raw score gap; delta_phi, omega, and delta_ref supply the
    named penalty gaps, weight factors, and reference terms an objective may
    consume. All omega values must be positive.
    """

    prompt_id: str
    delta_u: float
    delta_phi: Mapping[str, float] = field(default_factory=dict)
    omega: Mapping[str, float] = field(default_factory=dict)
    delta_ref: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "delta_phi", dict(self.delta_phi))
        object.__setattr__(self, "omega", dict(self.omega))
        object.__setattr__(self, "delta_ref", dict(self.delta_ref))
        for name, value in self.omega.items():
            if not value > 0:
                raise ValueError(
                    f"omega[{name!r}] must be positive, got {value!r}"
                )


@dataclass(frozen=True)
class NormalForm:
    penalty_coeffs: Mapping[str, float]
    weight_factors: tuple[str, ...]
    ref_terms: tuple[str, ...]
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "penalty_coeffs", dict(self.penalty_coeffs))
        object.__setattr__(self, "weight_factors", tuple(self.weight_factors))
        object.__setattr__(self, "ref_terms", tuple(self.ref_terms))
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def collect(ladder: Ladder | Iterable[Operator]) -> NormalForm:
    """Fold a ladder into normal form in a single pass over its operators.

    Repeated penalty names sum; weight factors and reference terms are kept as
    multisets (stored sorted so collection is order-insensitive).
    """
    ops = ladder.ops if isinstance(ladder, Ladder) else ladder
    coeffs: dict[str, float] = {}
    factors: list[str] = []
    refs: list[str] = []
    for op in ops:
        if isinstance(op, AdditivePenalty):
            coeffs[op.name] = coeffs.get(op.name, 0.0) + op.coeff
        elif isinstance(op, MultiplicativeWeight):
            factors.append(op.name)
        elif isinstance(op, ReferenceAdjust):
            refs.append(op.name)
        else:
            raise TypeError(f"not a ladder operator: {op!r}")
    return NormalForm(coeffs, tuple(sorted(factors)), tuple(sorted(refs)))


def _lookup(table: Mapping[str, float], name: str, kind: str, sample: PairSample):
    try:
        return table[name]
    except KeyError:
        raise KeyError(
            f"{kind} {name!r} missing from sample {sample.prompt_id!r}"
        ) from None


def margin(nf: NormalForm, sample: PairSample) -> float:
    """(delta_u - sum(coeff * delta_phi) - sum(delta_ref)) * prod(omega).

    The scale field cancels between the score and weight sides of the triple,
    so it does not appear here. Penalty names are consumed in sorted order so
    that ladders differing only in operator order produce bit-identical sums.
    """
    gap = sample.delta_u
    for name in sorted(nf.penalty_coeffs):
        gap -= nf.penalty_coeffs[name] * _lookup(
            sample.delta_phi, name, "penalty", sample
        )
    for name in nf.ref_terms:
        gap -= _lookup(sample.delta_ref, name, "reference term", sample)
    w = 1.0
    for name in nf.weight_factors:
        w *= _lookup(sample.omega, name, "weight factor", sample)
    return gap * w


def ladder_margin(ladder: Ladder | Iterable[Operator], sample: PairSample) -> float:
    """Evaluate a ladder left to right without collecting it first."""
    ops = ladder.ops if isinstance(ladder, Ladder) else ladder
    gap = sample.delta_u
    ref = 0.0
    w = 1.0
    for op in ops:
        if isinstance(op, AdditivePenalty):
            gap -= op.coeff * _lookup(sample.delta_phi, op.name, "penalty", sample)
        elif isinstance(op, MultiplicativeWeight):
            w *= _lookup(sample.omega, op.name, "weight factor", sample)
        elif isinstance(op, ReferenceAdjust):
            ref += _lookup(sample.delta_ref, op.name, "reference term", sample)
        else:
            raise TypeError(f"not a ladder operator: {op!r}")
    return (gap - ref) * w


def delta_score(nf: NormalForm, sample: PairSample) -> float:
    """Score-side view of the triple: scale * (delta_u - sum(coeff*delta_phi))."""
    gap = sample.delta_u
    for name in sorted(nf.penalty_coeffs):
        gap -= nf.penalty_coeffs[name] * _lookup(
            sample.delta_phi, name, "penalty", sample
        )
    return nf.scale * gap


def weight(nf: NormalForm, sample: PairSample) -> float:
    """Weight-side view of the triple: prod(omega) / scale."""
    w = 1.0
    for name in nf.weight_factors:
        w *= _lookup(sample.omega, name, "weight factor", sample)
    return w / nf.scale


@dataclass(frozen=True)
class ScaleFixResult:
    normal_form: NormalForm
    c: float
    beta_multiplier: float
    scale_undefined: bool = False


def scale_fix(nf: NormalForm, probe: Iterable[PairSample]) -> ScaleFixResult:
    """Pick c so the probe median of |delta_score| becomes 1.

    Zero gaps are excluded from the median; an all-zero probe leaves c at 1
    and sets the scale_undefined flag instead of failing. The returned normal
    form differs only in its scale field, so margins and decisions on any
    sample are unchanged exactly.
    """
    probe = list(probe)
    if not probe:
        raise ValueError("probe must contain at least one sample")
    magnitudes = [abs(delta_score(nf, s)) for s in probe]
    magnitudes = [m for m in magnitudes if m != 0.0]
    if not magnitudes:
        return ScaleFixResult(nf, 1.0, 1.0, scale_undefined=True)
    c = 1.0 / statistics.median(magnitudes)
    return ScaleFixResult(replace(nf, scale=nf.scale * c), c, c)


def margins_equal(
    a: NormalForm,
    b: NormalForm,
    samples: Iterable[PairSample],
    tol: float = 0.0,
) -> bool:
    return all(abs(margin(a, s) - margin(b, s)) <= tol for s in samples)


def recover_scale(
    a: NormalForm,
    b: NormalForm,
    samples: Iterable[PairSample],
    rel_tol: float = 1e-9,
) -> float | None:
    """Return c > 0 with delta_score_b = c * delta_score_a and weight_b =
    weight_a / c across all samples, or None if no single c fits."""
    samples = list(samples)
    anchored = [
        (delta_score(a, s), delta_score(b, s)) for s in samples
    ]
    nonzero = [(da, db) for da, db in anchored if da != 0.0]
    if not nonzero:
        raise ValueError("need at least one sample with a nonzero score gap")
    c = nonzero[0][1] / nonzero[0][0]
    if not c > 0:
        return None
    for da, db in anchored:
        if abs(db - c * da) > rel_tol * max(1.0, abs(db), abs(c * da)):
            return None
    for s in samples:
        wa, wb = weight(a, s), weight(b, s)
        if abs(wb - wa / c) > rel_tol * max(1.0, abs(wb)):
            return None
    return c
