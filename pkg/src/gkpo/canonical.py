"""Canonical byte serialization and content hashing for GKPO objects.

Canonical form is produced in three steps:

* collection: duplicate penalty names folded by summing, penalties sorted by
  name, factor / citation / group / reason lists sorted (reasons deduplicated),
  witness keys sorted;
* optional scale fixing: with a probe set, the constant c that brings the
  probe median of |delta f*| to 1 is absorbed as weight.constant/c and beta*c
  (constant-form weights only; an all-zero probe leaves c at 1 and flags
  scale_undefined);
* serialization: keys sorted lexicographically at every level, numbers rounded
  half-even to 1e-6 and emitted as the shortest plain decimal of the rounded
  value (no exponent, no trailing zeros, "-0" becomes "0"), compact
  separators, UTF-8 bytes. provenance.opal_hash never enters the byte form.

The opal hash is the SHA-256 of the canonical bytes, lowercase hex.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import replace
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from typing import Any, Iterable

from . import algebra
from .algebra import PairSample, ScaleFixResult
from .engine import object_normal_form
from .schema import GkpoObject, require_valid

_QUANTUM = Decimal("0.000001")


def canonical_number(value) -> str:
    """Round half-even to 1e-6; emit the shortest plain decimal form."""
    with localcontext() as ctx:
        ctx.prec = 500  # exact for any finite double at this quantum
        d = Decimal(value).quantize(_QUANTUM, rounding=ROUND_HALF_EVEN)
    if d == 0:
        return "0"
    text = format(d, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


def _emit(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, dict):
        parts = (
            f"{json.dumps(key, ensure_ascii=False)}:{_emit(value[key])}"
            for key in sorted(value)
        )
        return "{" + ",".join(parts) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_emit(item) for item in value) + "]"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (int, float, Decimal)):
        return canonical_number(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _num(value) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 500
        return Decimal(value).quantize(_QUANTUM, rounding=ROUND_HALF_EVEN)


def scale_fix_object(
    obj: GkpoObject, probe: Iterable[PairSample]
) -> tuple[GkpoObject, ScaleFixResult]:
    """Absorb the probe-derived scale constant into (weight.constant, beta).

    The product beta * margin is exactly invariant under the transform, so
    losses and decisions on the probe (or any data) are unchanged.
    """
    require_valid(obj)
    if obj.weight.form != "constant":
        raise ValueError("scale fixing requires a constant-form weight")
    result = algebra.scale_fix(object_normal_form(obj), probe)
    if result.scale_undefined:
        return obj, result
    c = result.c
    fixed = replace(
        obj,
        weight=replace(obj.weight, constant=obj.weight.constant / c),
        beta=obj.beta * c,
    )
    return fixed, result


def canonical_form(obj: GkpoObject, probe: Iterable[PairSample] | None = None) -> dict:
    """Nested dict of the canonical content; numbers are quantized Decimals."""
    require_valid(obj)
    if probe is not None:
        obj, _ = scale_fix_object(obj, probe)

    folded: dict[str, Any] = {}
    for p in obj.penalties:  # defensive: valid objects have unique names
        if p.name in folded:
            folded[p.name]["lambda"] += Decimal(p.coeff)
        else:
            entry: dict[str, Any] = {"name": p.name, "lambda": Decimal(p.coeff)}
            if p.meta_gate is not None:
                entry["meta"] = {"gate": p.meta_gate}
            folded[p.name] = entry
    penalties = []
    for name in sorted(folded):
        entry = dict(folded[name])
        entry["lambda"] = _num(entry["lambda"])
        penalties.append(entry)

    weight: dict[str, Any] = {"form": obj.weight.form}
    if obj.weight.constant is not None:
        weight["constant"] = _num(obj.weight.constant)
    if obj.weight.factors:
        weight["factors"] = sorted(obj.weight.factors)
    if obj.weight.score_fn is not None:
        weight["score_fn"] = obj.weight.score_fn

    score: dict[str, Any] = {"type": obj.score.type}
    if obj.score.custom_name is not None:
        score["custom_name"] = obj.score.custom_name

    reference: dict[str, Any] = {"form": obj.reference.form}
    if obj.reference.value is not None:
        reference["value"] = _num(obj.reference.value)

    witness: dict[str, Any] = {}
    for key in sorted(obj.reducibility.witness):
        value = obj.reducibility.witness[key]
        if isinstance(value, (list, tuple)):
            witness[key] = [_num(item) for item in value]
        else:
            witness[key] = _num(value)

    return {
        "version": obj.version,
        "score": score,
        "weight": weight,
        "reference": reference,
        "link": obj.link,
        "loss": obj.loss,
        "beta": _num(obj.beta),
        "penalties": penalties,
        "dataset_ops": {
            "group_weights": sorted(obj.dataset_ops.group_weights),
            "group_penalties": sorted(obj.dataset_ops.group_penalties),
            "composition": obj.dataset_ops.composition,
        },
        "provenance": {
            # opal_hash is excluded so the hash can be written back into the
            # object without changing what it hashes to.
            "method": obj.provenance.method,
            "citations": sorted(obj.provenance.citations),
            "notes": obj.provenance.notes,
        },
        "reducibility": {
            "inside_R": obj.reducibility.inside_R,
            "reasons": sorted(set(obj.reducibility.reasons)),
            "witness": witness,
        },
    }


def canonicalize(obj: GkpoObject, probe: Iterable[PairSample] | None = None) -> bytes:
    return _emit(canonical_form(obj, probe)).encode("utf-8")


def opal_hash(obj: GkpoObject, probe: Iterable[PairSample] | None = None) -> str:
    return hashlib.sha256(canonicalize(obj, probe)).hexdigest()


def attach_hash(
    obj: GkpoObject, probe: Iterable[PairSample] | None = None
) -> GkpoObject:
    digest = opal_hash(obj, probe)
    return replace(obj, provenance=replace(obj.provenance, opal_hash=digest))


ABSENT = None  # diff sentinel: key missing on that side


def diff(a: GkpoObject, b: GkpoObject) -> list[tuple[str, Any, Any]]:
    """Path-keyed deltas between canonical operator content.

    The provenance block (labels, citations, notes) is excluded: two objects
    that differ only in where they came from compare equal. Dicts are
    descended; lists and scalars compare atomically. A missing key appears as
    None on its side.
    """
    form_a = canonical_form(a)
    form_b = canonical_form(b)
    form_a.pop("provenance")
    form_b.pop("provenance")
    out: list[tuple[str, Any, Any]] = []

    def plain(value: Any) -> Any:
        # canonical forms hold quantized Decimals; report JSON-native values
        if isinstance(value, Decimal):
            return float(value)
        if isinstance(value, list):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value

    def walk(path: str, left: Any, right: Any):
        if isinstance(left, dict) and isinstance(right, dict):
            for key in sorted(set(left) | set(right)):
                sub = f"{path}.{key}" if path else key
                walk(sub, left.get(key, ABSENT), right.get(key, ABSENT))
            return
        if left != right:
            out.append((path, plain(left), plain(right)))

    walk("", form_a, form_b)
    return out
