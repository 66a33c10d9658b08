"""Command-line surface: validate, canonicalize, hash, convert, probe, demo,
harness, diff.

Exit codes: 0 success, 1 validation or domain failure, 2 usage error
(including unreadable files and bad harness configs). Every nonzero exit
writes one machine-parsable JSON line to stderr. Primary output is JSON on
stdout; --pretty indents it for reading.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from typing import Any, Sequence

from . import harness as hn
from .adapters import METHODS, MethodConfig, from_gkpo, to_gkpo
from .algebra import PairSample
from .canonical import canonicalize, diff, opal_hash, scale_fix_object
from .engine import object_margin
from .reducibility import PiecewisePsi, probe_gate, probe_score, probe_shift
from .schema import (
    GkpoObject,
    ParseError,
    WeightSpec,
    parse,
    serialize,
    validate,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class _UsageError(Exception):
    pass


class _Failure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse's own failures to exit code 2
        raise _UsageError(message)


def _print_json(payload: Any, pretty: bool = False) -> None:
    if pretty:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        print(json.dumps(payload, separators=(",", ":"), ensure_ascii=False))


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise _UsageError(f"cannot read {path}: {exc}") from exc


def _load_object(path: str) -> GkpoObject:
    try:
        return parse(_read_text(path))
    except ParseError as exc:
        raise _Failure(f"{path}: {exc}") from exc


def _load_probe(path: str) -> list[PairSample]:
    samples = []
    for i, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            samples.append(
                PairSample(
                    prompt_id=row["prompt_id"],
                    delta_u=row["delta_u"],
                    delta_phi=row.get("delta_phi", {}),
                    omega=row.get("omega", {}),
                    delta_ref=row.get("delta_ref", {}),
                )
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise _Failure(f"{path}:{i}: bad probe sample: {exc}") from exc
    if not samples:
        raise _Failure(f"{path}: probe file is empty")
    return samples


# ---------------------------------------------------------------------------
# Commands


def cmd_validate(args) -> int:
    try:
        obj = parse(_read_text(args.path))
        violations = validate(obj)
    except ParseError as exc:
        _print_json(
            {
                "path": args.path,
                "valid": False,
                "violations": [{"path": exc.path, "message": str(exc)}],
            },
            args.pretty,
        )
        raise _Failure(f"{args.path}: {exc}") from exc
    _print_json(
        {
            "path": args.path,
            "valid": not violations,
            "violations": [{"path": v.path, "message": v.message} for v in violations],
        },
        args.pretty,
    )
    if violations:
        raise _Failure(f"{args.path}: {len(violations)} violation(s)")
    return EXIT_OK


def _canonical_bytes(args) -> bytes:
    obj = _load_object(args.path)
    probe = None
    if args.scale_fix:
        if not args.probe:
            raise _UsageError("--scale-fix requires --probe")
        probe = _load_probe(args.probe)
    elif args.probe:
        raise _UsageError("--probe only applies with --scale-fix")
    try:
        return canonicalize(obj, probe=probe)
    except ValueError as exc:
        raise _Failure(str(exc)) from exc


def cmd_canonicalize(args) -> int:
    sys.stdout.write(_canonical_bytes(args).decode("utf-8") + "\n")
    return EXIT_OK


def cmd_hash(args) -> int:
    blob = _canonical_bytes(args)
    payload: dict[str, Any] = {"opal_hash": hashlib.sha256(blob).hexdigest()}
    if args.emit_canonical:
        payload["canonical"] = blob.decode("utf-8")
    _print_json(payload, args.pretty)
    return EXIT_OK


def cmd_convert(args) -> int:
    text = _read_text(args.path)
    try:
        raw = json.loads(text)
    except ValueError as exc:
        raise _Failure(f"{args.path}: not JSON: {exc}") from exc

    if isinstance(raw, dict) and "method" in raw:  # adapter config -> GKPO
        if args.to not in (None, "gkpo"):
            raise _UsageError("config input converts to GKPO; drop --to or use --to gkpo")
        params = {k: v for k, v in raw.items() if k != "method"}
        try:
            obj = to_gkpo(MethodConfig(raw["method"], params))
        except ValueError as exc:
            raise _Failure(str(exc)) from exc
        sys.stdout.write(serialize(obj) + "\n")
        return EXIT_OK

    if args.to in (None, "gkpo"):
        raise _UsageError("GKPO input needs --to with a method name")
    obj = _load_object(args.path)
    probe = _load_probe(args.probe) if args.probe else None
    try:
        result = from_gkpo(obj, args.to, probe=probe)
    except ValueError as exc:
        raise _Failure(str(exc)) from exc
    payload: dict[str, Any] = {
        "outcome": result.outcome,
        "reasons": list(result.reasons),
        "scale_applied": result.scale_applied,
        "target": None,
    }
    if result.target is not None:
        payload["target"] = {"method": result.target.method, **result.target.params}
    _print_json(payload, args.pretty)
    if result.blocked:
        raise _Failure(f"conversion blocked: {', '.join(result.reasons)}")
    return EXIT_OK


def _probe_payload(args) -> dict[str, Any]:
    if args.file:
        spec = json.loads(_read_text(args.file))
    else:
        spec = None

    if args.kind == "shift":
        if spec is not None:
            pairs = [(row[0], row[1]) for row in spec]
        else:
            if len(args.values) < 3:
                raise _UsageError("shift needs RAW_GAP and at least two offsets")
            gap = float(args.values[0])
            pairs = [(gap, float(v)) for v in args.values[1:]]
        outcome = probe_shift(pairs)
        payload: dict[str, Any] = {"kind": "shift", "feasible": outcome.feasible}
        if outcome.feasible:
            payload["fixed_reference"] = outcome.fixed_reference
        else:
            payload["witness"] = outcome.witness.as_witness_map()
            payload["margins"] = list(outcome.witness.margins)
        return payload

    if args.kind == "gate":
        if spec is not None:
            items = [tuple(row) for row in spec]
        else:
            items = []
            for token in args.values:
                parts = token.split(",")
                if len(parts) != 3:
                    raise _UsageError(f"gate item {token!r} is not PHI1,PHI2,TOTAL")
                items.append(tuple(float(p) for p in parts))
            if not items:
                raise _UsageError("gate needs at least one PHI1,PHI2,TOTAL item")
        outcome = probe_gate(items)
        payload = {"kind": "gate", "feasible": outcome.feasible}
        if outcome.feasible:
            payload["coefficients"] = list(outcome.coefficients)
        else:
            payload["witness"] = outcome.witness.as_witness_map()
            forced = outcome.witness.forced_coefficients
            payload["forced_coefficients"] = list(forced) if forced else None
        return payload

    # score
    if spec is not None:
        du, shift = spec["delta_u"], spec["penalty_shift"]
        below, above = spec["psi_below"], spec["psi_at_or_above"]
    else:
        if len(args.values) != 4:
            raise _UsageError("score needs DELTA_U SHIFT PSI_BELOW PSI_AT_OR_ABOVE")
        du, shift, below, above = (float(v) for v in args.values)
    outcome = probe_score(du, shift, PiecewisePsi(below, above))
    return {
        "kind": "score",
        "order_weight_first": outcome.order_weight_first,
        "order_penalty_first": outcome.order_penalty_first,
        "flipped": outcome.flipped,
    }


def cmd_probe(args) -> int:
    try:
        payload = _probe_payload(args)
    except _UsageError:
        raise
    except (ValueError, KeyError, IndexError) as exc:
        raise _Failure(f"probe failed: {exc}") from exc
    _print_json(payload, args.pretty)
    return EXIT_OK


def _demo_lines() -> list[str]:
    sample_a = PairSample(prompt_id="demo", delta_u=0.50)
    sample_b = PairSample(
        prompt_id="demo",
        delta_u=0.50,
        delta_phi={"rank_margin_1": 0.20, "rank_margin_2": -0.10},
    )
    sample_c = PairSample(
        prompt_id="demo",
        delta_u=0.50,
        delta_phi={"rank_margin_1": 0.10, "rank_margin_2": -0.05},
    )

    dpo = to_gkpo(MethodConfig("DPO", {"beta": 1.0, "ref": 0.10}))
    rrhf = to_gkpo(
        MethodConfig(
            "RRHF",
            {"beta": 1.0, "penalties": {"rank_margin_1": 0.50, "rank_margin_2": 0.10}},
        )
    )
    dpo_alt = to_gkpo(MethodConfig("DPO", {"beta": 1.0, "ref": 0.15}))
    rrhf_alt = to_gkpo(
        MethodConfig(
            "RRHF",
            {"beta": 1.0, "penalties": {"rank_margin_1": 0.4, "rank_margin_2": 0.2}},
        )
    )

    lines = [
        f"DPO fixed reference: margin {object_margin(dpo, sample_a):.2f}, "
        f"opal_hash {opal_hash(dpo)}",
        f"RRHF rank penalties: margin {object_margin(rrhf, sample_b):.2f}, "
        f"opal_hash {opal_hash(rrhf)}",
        f"DPO alternate reference: margin {object_margin(dpo_alt, sample_a):.2f}, "
        f"opal_hash {opal_hash(dpo_alt)}",
        f"RRHF folded penalties: margin {object_margin(rrhf_alt, sample_c):.2f}, "
        f"opal_hash {opal_hash(rrhf_alt)}",
    ]

    shift = probe_shift([(0.20, 0.50), (0.20, -0.50)])
    m1, m2 = shift.witness.margins
    lines.append(
        f"SHIFT witness: margins {m1:.2f} / {m2:.2f} "
        f"(raw gap 0.20, offsets +0.50/-0.50), feasible {shift.feasible}"
    )

    gate = probe_gate([(1.0, 10.0, 1.0), (0.0, 1.0, 1.0)])
    l1, l2 = gate.witness.forced_coefficients
    lines.append(
        f"GATE forced: lambda1 {l1:g}, lambda2 {l2:g}, feasible {gate.feasible}"
    )

    score = probe_score(0.40, -0.80, PiecewisePsi(2.0, 0.5))
    lines.append(
        f"SCORE orders: margins {score.order_weight_first:.2f} / "
        f"{score.order_penalty_first:.2f}, flipped {score.flipped}"
    )

    half = GkpoObject(
        weight=WeightSpec(form="constant", constant=0.5),
        reference=dpo.reference,
        beta=1.0,
        provenance=dpo.provenance,
    )
    probe = [
        PairSample(prompt_id="probe1", delta_u=2.0),
        PairSample(prompt_id="probe2", delta_u=2.0),
    ]
    fixed, result = scale_fix_object(half, probe)
    twin = GkpoObject(
        weight=WeightSpec(form="constant", constant=1.0),
        reference=dpo.reference,
        beta=0.5,
        provenance=dpo.provenance,
    )
    lines.append(
        f"SCALE fix: c {result.c:g}, weight 0.5 -> {fixed.weight.constant:g}, "
        f"beta multiplier {result.beta_multiplier:g}, "
        f"hash equals pre-scaled twin {opal_hash(fixed) == opal_hash(twin)}"
    )
    return lines


def cmd_demo(args) -> int:
    for line in _demo_lines():
        print(line)
    return EXIT_OK


_HARNESS_KEYS = {
    "size",
    "feature_dim",
    "data_seed",
    "steps",
    "learning_rate",
    "seeds",
    "eval_every",
    "init_scale",
    "bootstrap_resamples",
}


def _harness_setup(which: str, config: dict[str, Any]):
    unknown = set(config) - _HARNESS_KEYS
    if unknown:
        raise _UsageError(f"unknown harness config keys: {sorted(unknown)}")
    defaults = {"h1": (300, 6, "none"), "h2": (1000, 8, "witness_slice")}[which]
    size = config.get("size", defaults[0])
    dim = config.get("feature_dim", defaults[1])
    try:
        data = hn.gen_dataset(size, dim, defaults[2], seed=config.get("data_seed", 0))
        hp = hn.HarnessParams(
            steps=config.get("steps", 150),
            learning_rate=config.get("learning_rate", 0.5),
            seeds=tuple(config.get("seeds", range(10))),
            eval_every=config.get("eval_every", 10),
            init_scale=config.get("init_scale", 0.1),
            bootstrap_resamples=config.get("bootstrap_resamples", 1000),
        )
    except (ValueError, TypeError) as exc:
        raise _UsageError(f"bad harness config: {exc}") from exc
    return data, hp


def cmd_harness(args) -> int:
    config: dict[str, Any] = {}
    if args.config:
        try:
            config = json.loads(_read_text(args.config))
            if not isinstance(config, dict):
                raise ValueError("config must be a JSON object")
        except ValueError as exc:
            raise _UsageError(f"bad harness config: {exc}") from exc
    data, hp = _harness_setup(args.which, config)

    if args.which == "h1":
        spec_a = to_gkpo(MethodConfig("DPO", {"beta": 1.0, "ref": 0.10}))
        spec_b = to_gkpo(
            MethodConfig(
                "PPO_RM",
                {
                    "beta": 1.0,
                    "ref": 0.05,
                    "kl_coeff": 0.5,
                    "anchor_offset": 0.1,
                    "fold_kl": True,
                },
            )
        )
        report = hn.run_h1(spec_a, spec_b, data, hp)
    else:
        base = to_gkpo(MethodConfig("DPO", {"beta": 1.0, "ref": 0.0}))
        shifted = to_gkpo(
            MethodConfig(
                "ORPO",
                {
                    "beta": 1.0,
                    "offset_mode": "per_prompt",
                    "shift_evidence": {
                        "raw_gap": hn.FLIP_GAP,
                        "offsets": [hn.FLIP_OFFSET, -hn.FLIP_OFFSET],
                    },
                },
            )
        )
        report = hn.run_h2(base, shifted, data, hp)

    payload = report.to_json_dict()
    _print_json(payload, args.pretty)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        stem = os.path.join(args.out, f"{args.which}_report")
        with open(stem + ".json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        with open(stem + ".txt", "w", encoding="utf-8") as fh:
            fh.write(report.to_text() + "\n")
    return EXIT_OK


def cmd_diff(args) -> int:
    a = _load_object(args.path_a)
    b = _load_object(args.path_b)
    try:
        delta = diff(a, b)
    except ValueError as exc:
        raise _Failure(str(exc)) from exc
    payload = [{"path": p, "a": va, "b": vb} for p, va, vb in delta]
    _print_json(payload, args.pretty)
    return EXIT_OK  # a nonempty delta is an answer, not an error


# ---------------------------------------------------------------------------
# Wiring


def _build_parser() -> _Parser:
    parser = _Parser(prog="gkpo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--pretty", action="store_true", help="indent JSON output")
        return p

    p = add("validate", cmd_validate, help="check a GKPO file, print violations")
    p.add_argument("path")

    for name, fn in (("canonicalize", cmd_canonicalize), ("hash", cmd_hash)):
        p = add(name, fn, help=f"{name} a GKPO file")
        p.add_argument("path")
        p.add_argument("--probe", help="JSONL probe samples for --scale-fix")
        p.add_argument("--scale-fix", action="store_true", dest="scale_fix")
        if name == "hash":
            p.add_argument(
                "--emit-canonical", action="store_true", dest="emit_canonical"
            )

    p = add("convert", cmd_convert, help="convert between GKPO and method configs")
    p.add_argument("path")
    p.add_argument("--to", choices=sorted(METHODS) + ["gkpo"])
    p.add_argument("--probe", help="JSONL probe samples for weight absorption")

    p = add("probe", cmd_probe, help="run a reducibility probe")
    p.add_argument("kind", choices=["shift", "gate", "score"])
    p.add_argument("values", nargs="*")
    p.add_argument("--file", help="JSON file with probe inputs")

    add("demo", cmd_demo, help="print the worked examples with margins and hashes")

    p = add("harness", cmd_harness, help="run a training comparison")
    p.add_argument("which", choices=["h1", "h2"])
    p.add_argument("--config", help="JSON file with data and training overrides")
    p.add_argument("--out", help="directory for report files")

    p = add("diff", cmd_diff, help="field-level delta between canonical forms")
    p.add_argument("path_a")
    p.add_argument("path_b")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(json.dumps({"error": str(exc), "code": EXIT_USAGE}), file=sys.stderr)
        return EXIT_USAGE
    except _Failure as exc:
        print(json.dumps({"error": str(exc), "code": EXIT_FAILURE}), file=sys.stderr)
        return EXIT_FAILURE


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
