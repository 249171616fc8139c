import numpy as np
import pytest

from pahs.errors import ConfigError
from pahs.model.config import preset
from pahs.model.parameters import init_parameters
from pahs.traineval.ablation import (
    HISTOGRAM_COLUMNS,
    REPORT_COLUMNS,
    TIMING_COLUMNS,
    ablate,
    params_for,
    recurrence_timing,
    resolve_variants,
    selection_histogram,
    shared_parameters,
)
from pahs.traineval.synth import SynthSpec, generate_synthetic


def _data():
    return [generate_synthetic(SynthSpec(height=16, width=16, length=2, seed=1))]


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError):
        resolve_variants(["n9"], preset("tiny"))


def test_families_expand():
    """Test that a family name selects all of its members"""
    base = preset("tiny")

    recurrence = resolve_variants(["recurrence"], base)
    synergy = resolve_variants(["synergy"], base)

    assert list(recurrence) == ["n0", "n1", "n2", "n3", "n4"]
    assert recurrence["n3"].n_pp == 3
    assert len(synergy) == 8
    assert not synergy["synergy-pp0-snla0-bi0"].bidirectional
    assert synergy["synergy-pp1-snla1-bi1"].attention == "snla"


def test_report_columns_and_rows():
    report = ablate(preset("tiny"), ["n0", "attn-nla"], _data())

    assert list(report.columns) == REPORT_COLUMNS
    assert list(report["variant"]) == ["n0", "attn-nla"]
    assert (report["wall_ms"] > 0).all()
    assert report["ssim"].between(-1, 1).all()


def test_no_recurrence_matches_no_pp_inputs():
    """Test that n = 0 and disabled Ping-Pong inputs restore identical frames"""
    report = ablate(preset("tiny"), ["n0", "inputs-none"], _data())

    n0, none = report.iloc[0], report.iloc[1]
    assert n0["psnr"] == none["psnr"]
    assert n0["ssim"] == none["ssim"]


def test_variants_share_weights_when_shapes_match():
    """Test that a variant with a different Q embedding keeps every other tensor"""
    base = preset("tiny")
    shared = shared_parameters(base)
    variants = resolve_variants(["n2", "mode-self"], base)

    same = params_for(variants["n2"], shared)
    self_mode = params_for(variants["mode-self"], shared)

    name = "fwd.extractor/stem.w"
    assert same[name] is shared[name]
    assert self_mode["fwd.snla/Q.w"].shape != shared["fwd.snla/Q.w"].shape
    for n in self_mode.names():
        if not n.endswith("snla/Q.w"):
            assert self_mode[n] is shared[n], n


def test_selection_histogram_counts_every_score():
    """Test that each SNLA variant histograms one score per token and frame"""
    hist = selection_histogram(preset("tiny"), ["attention"], _data(), bins=5)

    assert list(hist.columns) == HISTOGRAM_COLUMNS
    assert set(hist["variant"]) == {"attn-snla"}
    assert hist["count"].sum() == 2 * 4
    np.testing.assert_allclose(hist["bin_hi"].max(), 1.0)


def test_recurrence_timing_grows_with_n():
    """Test that the recurrent core gets slower with every extra Ping-Pong step"""
    config = preset("full", bidirectional=False)
    blur, _ = generate_synthetic(SynthSpec(height=32, width=32, length=2))

    sweep = recurrence_timing(config, blur, init_parameters(config), repeats=3)

    assert list(sweep.columns) == TIMING_COLUMNS
    assert list(sweep["n"]) == [0, 1, 2, 4]
    assert sweep["wall_ms"].is_monotonic_increasing
