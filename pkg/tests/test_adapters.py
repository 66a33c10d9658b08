"""Method adapters: emission, recovery, blocking, and round-trips."""

import numpy as np
import pytest

from gkpo.adapters import (
    ABSORB_TOL,
    CITATIONS,
    METHODS,
    BlockedConversionError,
    ConversionResult,
    MethodConfig,
    configs_equal,
    from_gkpo,
    normalize_config,
    roundtrip,
    to_gkpo,
)
from gkpo.algebra import PairSample
from gkpo.canonical import diff, opal_hash
from gkpo.engine import object_margin
from gkpo.schema import ReferenceSpec, WeightSpec, parse, serialize, validate

from conftest import load_fixture


def cfg_dpo(**extra) -> MethodConfig:
    return MethodConfig("DPO", {"beta": 1.0, "ref": 0.10, **extra})


# --- emission ---------------------------------------------------------------


def test_emissions_match_shipped_fixtures_by_hash():
    cases = {
        "dpo_fixed_reference.json": cfg_dpo(),
        "rrhf_rank_penalties.json": MethodConfig(
            "RRHF",
            {"beta": 1.0, "penalties": {"rank_margin_1": 0.50, "rank_margin_2": 0.10}},
        ),
        "ppo_rm_kl_anchor.json": MethodConfig(
            "PPO_RM", {"beta": 1.0, "ref": 0.05, "kl_coeff": 0.5}
        ),
        "kto_product_weight.json": MethodConfig(
            "KTO_GRPO",
            {
                "beta": 1.0,
                "ref": 0.05,
                "weight_mode": "product",
                "factors": ["clip_snr", "var_floor"],
            },
        ),
    }
    for name, cfg in cases.items():
        assert opal_hash(to_gkpo(cfg)) == opal_hash(load_fixture(name)), name


def test_emitted_objects_are_valid_for_every_method():
    configs = [
        cfg_dpo(),
        MethodConfig("PPO_RM", {"beta": 2.0, "ref": 0.0, "kl_coeff": 0.3}),
        MethodConfig(
            "PPO_RM",
            {"beta": 2.0, "ref": 0.1, "kl_coeff": 0.3, "anchor_offset": 0.2,
             "fold_kl": True},
        ),
        MethodConfig("RRHF", {"beta": 1.0, "penalties": {"rank_margin_1": 0.5}}),
        MethodConfig("ORPO", {"beta": 1.0, "offset_mode": "fixed", "offset": 0.2}),
        MethodConfig("ORPO", {"beta": 1.0, "offset_mode": "per_prompt"}),
        MethodConfig("KTO_GRPO", {"beta": 1.0, "ref": 0.0, "weight_mode": "constant"}),
        MethodConfig(
            "KTO_GRPO",
            {"beta": 1.0, "ref": 0.0, "weight_mode": "score_dependent",
             "score_fn": "psi_piecewise"},
        ),
    ]
    for cfg in configs:
        obj = to_gkpo(cfg)
        assert validate(obj) == [], cfg.method
        assert parse(serialize(obj)) == obj


def test_emission_citations_fixed_per_method():
    assert CITATIONS["DPO"] == ("rafailov2023direct",)
    assert CITATIONS["KTO_GRPO"] == ("Ethayarajh2024kto", "shao2024deepseekmath")
    for method in METHODS:
        if method == "ORPO":
            cfg = MethodConfig(method, {"beta": 1.0, "offset_mode": "fixed", "offset": 0.0})
        elif method == "PPO_RM":
            cfg = MethodConfig(method, {"beta": 1.0, "ref": 0.0, "kl_coeff": 0.1})
        elif method == "RRHF":
            cfg = MethodConfig(method, {"beta": 1.0, "penalties": {}})
        elif method == "KTO_GRPO":
            cfg = MethodConfig(method, {"beta": 1.0, "ref": 0.0, "weight_mode": "constant"})
        else:
            cfg = cfg_dpo()
        obj = to_gkpo(cfg)
        assert obj.provenance.method == method
        assert obj.provenance.citations == CITATIONS[method]


def test_zero_reference_emits_fixed_zero_form():
    obj = to_gkpo(MethodConfig("DPO", {"beta": 1.0, "ref": 0.0}))
    assert obj.reference == ReferenceSpec(form="fixed_zero", value=0.0)
    obj = to_gkpo(cfg_dpo())
    assert obj.reference == ReferenceSpec(form="fixed_scalar", value=0.10)


def test_orpo_per_prompt_emits_flag_and_probe_witness():
    cfg = MethodConfig(
        "ORPO",
        {
            "beta": 1.0,
            "offset_mode": "per_prompt",
            "shift_evidence": {"raw_gap": 0.20, "offsets": [0.50, -0.50]},
        },
    )
    obj = to_gkpo(cfg)
    assert obj.reference.form == "per_prompt"
    assert obj.reducibility.inside_R is False
    assert obj.reducibility.reasons == ("reference_shift",)
    assert obj.reducibility.witness == {
        "raw_gap": 0.20,
        "delta_ref_prompt1": 0.50,
        "delta_ref_prompt2": -0.50,
    }
    # shipped fixture carries the same operator content (notes differ)
    assert diff(obj, load_fixture("orpo_prompt_shift.json")) == []


def test_orpo_per_prompt_without_evidence_has_empty_witness():
    obj = to_gkpo(MethodConfig("ORPO", {"beta": 1.0, "offset_mode": "per_prompt"}))
    assert obj.reducibility.reasons == ("reference_shift",)
    assert obj.reducibility.witness == {}


def test_ppo_fold_emits_the_dpo_object_it_reduces_to():
    folded = MethodConfig(
        "PPO_RM",
        {"beta": 1.0, "ref": 0.05, "kl_coeff": 0.5, "anchor_offset": 0.1,
         "fold_kl": True},
    )
    direct = MethodConfig("DPO", {"beta": 1.0, "ref": 0.05 + 0.5 * 0.1})
    a, b = to_gkpo(folded), to_gkpo(direct)
    assert a == b
    assert opal_hash(a) == opal_hash(b)
    assert a.provenance.method == "DPO"


def test_ppo_unfolded_keeps_kl_anchor_penalty():
    obj = to_gkpo(MethodConfig("PPO_RM", {"beta": 1.0, "ref": 0.05, "kl_coeff": 0.5}))
    assert [p.name for p in obj.penalties] == ["kl_anchor"]
    assert obj.penalties[0].coeff == 0.5


# --- config validation --------------------------------------------------------


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        MethodConfig("SFT", {"beta": 1.0})


def test_missing_required_key_rejected():
    with pytest.raises(ValueError) as err:
        normalize_config(MethodConfig("DPO", {"beta": 1.0}))
    assert "ref" in str(err.value)


def test_unknown_key_rejected():
    with pytest.raises(ValueError) as err:
        normalize_config(cfg_dpo(temperature=0.7))
    assert "temperature" in str(err.value)


def test_beta_must_be_positive_in_configs():
    with pytest.raises(ValueError):
        normalize_config(MethodConfig("DPO", {"beta": 0.0, "ref": 0.1}))


def test_orpo_mode_specific_requirements():
    with pytest.raises(ValueError):
        normalize_config(MethodConfig("ORPO", {"beta": 1.0, "offset_mode": "fixed"}))
    with pytest.raises(ValueError):
        normalize_config(
            MethodConfig("ORPO", {"beta": 1.0, "offset_mode": "per_prompt",
                                  "offset": 0.2})
        )
    with pytest.raises(ValueError):
        normalize_config(
            MethodConfig(
                "ORPO",
                {"beta": 1.0, "offset_mode": "per_prompt",
                 "shift_evidence": {"raw_gap": 0.2, "offsets": [0.5]}},
            )
        )
    with pytest.raises(ValueError):
        normalize_config(
            MethodConfig(
                "ORPO",
                {"beta": 1.0, "offset_mode": "fixed", "offset": 0.2,
                 "shift_evidence": {"raw_gap": 0.2, "offsets": [0.5, -0.5]}},
            )
        )
    with pytest.raises(ValueError):
        normalize_config(MethodConfig("ORPO", {"beta": 1.0, "offset_mode": "sliding"}))


def test_kto_mode_specific_requirements():
    with pytest.raises(ValueError):
        normalize_config(
            MethodConfig("KTO_GRPO", {"beta": 1.0, "ref": 0.0, "weight_mode": "product"})
        )
    with pytest.raises(ValueError):
        normalize_config(
            MethodConfig(
                "KTO_GRPO",
                {"beta": 1.0, "ref": 0.0, "weight_mode": "score_dependent"},
            )
        )
    with pytest.raises(ValueError):
        normalize_config(
            MethodConfig(
                "KTO_GRPO",
                {"beta": 1.0, "ref": 0.0, "weight_mode": "constant",
                 "factors": ["clip_snr"]},
            )
        )


def test_normalize_sorts_penalty_maps():
    cfg = normalize_config(
        MethodConfig("RRHF", {"beta": 1.0, "penalties": {"z_phi": 1.0, "a_phi": 2.0}})
    )
    assert list(cfg.params["penalties"]) == ["a_phi", "z_phi"]


# --- recovery and blocking -------------------------------------------------------


def test_roundtrip_dpo_and_rrhf():
    for cfg in (
        cfg_dpo(),
        MethodConfig("DPO", {"beta": 2.0, "ref": 0.0}),
        MethodConfig(
            "RRHF",
            {"beta": 1.0, "penalties": {"rank_margin_1": 0.50, "rank_margin_2": 0.10}},
        ),
        MethodConfig("RRHF", {"beta": 0.5, "penalties": {}, "ref": 0.3}),
    ):
        assert configs_equal(roundtrip(cfg), cfg), cfg.method


def test_roundtrip_remaining_methods():
    for cfg in (
        MethodConfig("PPO_RM", {"beta": 1.0, "ref": 0.05, "kl_coeff": 0.5}),
        MethodConfig("ORPO", {"beta": 1.0, "offset_mode": "fixed", "offset": 0.2}),
        MethodConfig(
            "KTO_GRPO",
            {"beta": 1.0, "ref": 0.05, "weight_mode": "product",
             "factors": ["clip_snr", "var_floor"]},
        ),
        MethodConfig("KTO_GRPO", {"beta": 1.0, "ref": 0.0, "weight_mode": "constant"}),
    ):
        assert configs_equal(roundtrip(cfg), cfg), cfg.method


def test_roundtrip_blocked_for_flagged_configs():
    cfg = MethodConfig(
        "ORPO",
        {"beta": 1.0, "offset_mode": "per_prompt",
         "shift_evidence": {"raw_gap": 0.2, "offsets": [0.5, -0.5]}},
    )
    with pytest.raises(BlockedConversionError) as err:
        roundtrip(cfg)
    assert "reference_shift" in err.value.reasons


def test_cross_conversion_rrhf_to_dpo_keeps_margins():
    rrhf = MethodConfig(
        "RRHF",
        {"beta": 1.0, "penalties": {"rank_margin_1": 0.50, "rank_margin_2": 0.10}},
    )
    source = to_gkpo(rrhf)
    result = from_gkpo(source, "DPO")
    assert not result.blocked
    assert result.scale_applied == 1.0
    target = to_gkpo(result.target)
    rng = np.random.default_rng(0)
    for _ in range(50):
        sample = PairSample(
            "s",
            float(rng.normal()),
            delta_phi={
                "rank_margin_1": float(rng.normal()),
                "rank_margin_2": float(rng.normal()),
            },
        )
        assert object_margin(target, sample) == pytest.approx(
            object_margin(source, sample), abs=1e-12
        )


def test_blocked_conversion_copies_reducibility_reasons(score_weight_obj):
    result = from_gkpo(score_weight_obj, "DPO")
    assert result.blocked
    assert result.outcome == "blocked"
    assert result.target is None
    assert "score_dependent_weight" in result.reasons


def test_blocked_reasons_union_block_and_classify(orpo_shift_obj):
    # strip the stored block; classify should still flag the per_prompt form
    from dataclasses import replace
    from gkpo.schema import ReducibilityBlock

    stripped = replace(orpo_shift_obj, reducibility=ReducibilityBlock())
    result = from_gkpo(stripped, "ORPO")
    assert result.blocked
    assert result.reasons == ("reference_shift",)


def test_per_dataset_reference_not_representable():
    obj = to_gkpo(cfg_dpo())
    from dataclasses import replace

    moved = replace(obj, reference=ReferenceSpec(form="per_dataset", value=None))
    result = from_gkpo(moved, "DPO")
    assert result.blocked
    assert result.reasons == ("reference_not_representable",)


def test_extra_penalties_not_representable_for_narrow_targets():
    rrhf = to_gkpo(
        MethodConfig("RRHF", {"beta": 1.0, "penalties": {"length_shift": 0.2}})
    )
    for target in ("PPO_RM", "ORPO", "KTO_GRPO"):
        result = from_gkpo(rrhf, target)
        assert result.blocked, target
        assert result.reasons == ("penalty_not_representable",), target
    # but DPO and RRHF absorb them
    assert not from_gkpo(rrhf, "DPO").blocked
    assert not from_gkpo(rrhf, "RRHF").blocked


def test_kl_anchor_recovers_into_ppo():
    obj = to_gkpo(MethodConfig("PPO_RM", {"beta": 1.0, "ref": 0.05, "kl_coeff": 0.5}))
    result = from_gkpo(obj, "PPO_RM")
    assert not result.blocked
    assert result.target.params["kl_coeff"] == 0.5


def test_constant_weight_absorbs_into_beta():
    obj = to_gkpo(cfg_dpo())
    from dataclasses import replace

    halved = replace(
        obj, weight=WeightSpec(form="constant", constant=0.5), beta=2.0
    )
    result = from_gkpo(halved, "DPO")
    assert not result.blocked
    assert result.scale_applied == 0.5
    assert result.target.params["beta"] == 1.0  # 2.0 * 0.5


def test_product_weight_passes_through_to_kto():
    obj = load_fixture("kto_product_weight.json")
    result = from_gkpo(obj, "KTO_GRPO")
    assert not result.blocked
    assert result.target.params["weight_mode"] == "product"
    assert result.target.params["factors"] == ["clip_snr", "var_floor"]


def test_product_weight_blocked_without_probe():
    obj = load_fixture("kto_product_weight.json")
    result = from_gkpo(obj, "DPO")
    assert result.blocked
    assert result.reasons == ("weight_not_absorbable",)


def test_product_weight_absorbed_with_constant_probe():
    obj = load_fixture("kto_product_weight.json")
    probe = [
        PairSample("p1", 1.0, omega={"clip_snr": 0.5, "var_floor": 4.0}),
        PairSample("p2", -2.0, omega={"clip_snr": 2.0, "var_floor": 1.0}),
        PairSample("p3", 0.7, omega={"clip_snr": 1.0, "var_floor": 2.0}),
    ]
    result = from_gkpo(obj, "DPO", probe=probe)
    assert not result.blocked
    assert result.scale_applied == pytest.approx(2.0, abs=ABSORB_TOL)
    assert result.target.params["beta"] == pytest.approx(2.0, abs=1e-12)


def test_product_weight_blocked_on_varying_probe():
    obj = load_fixture("kto_product_weight.json")
    probe = [
        PairSample("p1", 1.0, omega={"clip_snr": 0.5, "var_floor": 4.0}),
        PairSample("p2", -2.0, omega={"clip_snr": 3.0, "var_floor": 1.0}),
    ]
    result = from_gkpo(obj, "DPO", probe=probe)
    assert result.blocked
    assert result.reasons == ("weight_not_absorbable",)


def test_from_gkpo_rejects_unknown_target(dpo_obj):
    with pytest.raises(ValueError):
        from_gkpo(dpo_obj, "gkpo")


def test_conversion_result_invariants():
    with pytest.raises(ValueError):
        ConversionResult("blocked", reasons=())
    ok = ConversionResult("blocked", reasons=("weight_not_absorbable",))
    assert ok.blocked
    done = ConversionResult("converted", target=cfg_dpo(), scale_applied=1.0)
    assert not done.blocked


def test_configs_equal_tolerance_and_structure():
    a = cfg_dpo()
    assert configs_equal(a, cfg_dpo(ref=0.10 + 5e-7))
    assert not configs_equal(a, cfg_dpo(ref=0.11))
    assert not configs_equal(a, MethodConfig("RRHF", {"beta": 1.0, "penalties": {}}))
    p1 = MethodConfig("RRHF", {"beta": 1.0, "penalties": {"a_phi": 1.0}})
    p2 = MethodConfig("RRHF", {"beta": 1.0, "penalties": {"a_phi": 1.0 + 5e-7}})
    p3 = MethodConfig("RRHF", {"beta": 1.0, "penalties": {"b_phi": 1.0}})
    assert configs_equal(p1, p2)
    assert not configs_equal(p1, p3)
