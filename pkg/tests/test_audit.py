import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from papez.audit import (
    CostModel,
    OpCounter,
    complexity_table,
    fit_scaling_exponent,
    full_attention_macs,
    halting_report,
    predict_macs,
    write_report_csv,
)
from papez.bench import measure_iteration, sweep, sweep_exponent
from papez.config import PapezConfig
from papez.model import Papez

from conftest import tiny_config


def test_awm_formula_example():
    # 1500 tokens in chunks of 150 (10 chunks) of 150 + 16 rows each
    value = predict_macs("awm", 1500, 150, 16, 256)
    assert value == 10 * 166 ** 2 * 256 ** 2
    assert value == 18_059_100_160


@settings(max_examples=50)
@given(N=st.integers(1, 5000), K=st.integers(1, 300), H=st.integers(1, 64))
def test_awm_without_memory_is_intra_only(N, K, H):
    assert predict_macs("awm", N, K, 0, H) == predict_macs("intra_only", N, K, 0, H)


def test_intra_only_family():
    assert predict_macs("intra_only", 1500, 150, 0, 256) == 1500 * 150 * 256 ** 2


def test_dual_path_formulas():
    N, K, H = 1600, 40, 8
    assert predict_macs("dual_path_full", N, K, 0, H) == (N * K + N * N // K) * H * H
    assert predict_macs("dual_path_reduced", N, K, 0, H, depth_ratio=2) == (N * K + N * N // (2 * K)) * H * H
    with pytest.raises(ValueError):
        predict_macs("other", N, K)
    with pytest.raises(ValueError):
        predict_macs("awm", 0, K)


def test_parameter_columns():
    assert CostModel("dual_path_full").params(256) / CostModel("awm").params(256) == 2
    assert CostModel("awm").params(16) == 4 * 16 * 16
    assert CostModel("dual_path_reduced").params(16, depth_ratio=2) == 6 * 16 * 16
    with pytest.raises(ValueError):
        CostModel("bogus")


def test_fit_exponent_exact_powers():
    ns = [1000, 2000, 4000, 8000, 16000]
    assert fit_scaling_exponent([(n, 3.0 * n) for n in ns]) == pytest.approx(1.0, abs=1e-9)
    assert fit_scaling_exponent([(n, n ** 1.5) for n in ns]) == pytest.approx(1.5, abs=1e-9)


def test_fit_exponent_preconditions():
    with pytest.raises(ValueError):
        fit_scaling_exponent([(1000, 1), (2000, 2), (4000, 4)])
    with pytest.raises(ValueError):
        fit_scaling_exponent([(1000, 1), (2000, 2), (3000, 3), (4000, 4)])


def test_dual_path_sqrt_chunks_scale_as_n_to_1_5():
    ns = [1000, 2000, 4000, 8000, 16000]
    pts = [(n, predict_macs("dual_path_full", n, math.sqrt(n), 0, 256)) for n in ns]
    assert 1.45 <= fit_scaling_exponent(pts) <= 1.55


def test_measured_matches_formula_when_divisible():
    cfg = PapezConfig(hidden=16, heads=2, ffn_hidden=8, n_memory=4, chunk_size=10)
    for n in (10, 50, 120):
        c = measure_iteration(cfg, n)
        assert c.attention_macs == predict_macs("awm", n, 10, 4, 16)
        assert c.ffn_tokens == n + 4
        assert c.iterations == 1


def test_measured_matches_full_formula_with_ragged_chunk():
    cfg = PapezConfig(hidden=16, heads=2, ffn_hidden=8, n_memory=4, chunk_size=10)
    assert measure_iteration(cfg, 37).attention_macs == full_attention_macs(37, 10, 4, 16)


def test_exact_counter_counts_real_multiplies():
    cfg = PapezConfig(hidden=8, heads=2, ffn_hidden=4, n_memory=2, chunk_size=5)
    c = measure_iteration(cfg, 10)
    chunks, rows, keys = 2, 7, 7
    attention = chunks * 2 * rows * keys * 8
    projections = (2 * (10 + 2) + (2 + 10) + (chunks * 2 + 10)) * 64
    assert c.attention_macs_exact == attention + projections
    assert c.ffn_macs == 12 * (8 * 4 + 4 * 9)


def test_sweeps():
    cfg = PapezConfig(hidden=8, heads=2, ffn_hidden=4, n_memory=2, chunk_size=5)
    pts = sweep(cfg, "N", [10, 20, 40, 80])
    assert [p.measured for p in pts] == [p.predicted for p in pts]
    assert sweep_exponent(pts) == pytest.approx(1.0, abs=1e-9)
    k_pts = sweep(cfg, "K", [5, 10], n_tokens=20)
    assert [p.chunk_size for p in k_pts] == [5, 10]
    m_pts = sweep(cfg, "M", [0, 3], n_tokens=20)
    assert [p.measured for p in m_pts] == [p.predicted for p in m_pts]
    with pytest.raises(ValueError):
        sweep(cfg, "H", [1])


def test_counter_monotone_within_pass():
    model = Papez(tiny_config(max_steps=3), seed=0)
    counter = OpCounter()
    model(np.random.default_rng(0).uniform(-1, 1, 800), counter=counter)
    cum = np.cumsum(counter.attention_macs_per_iter)
    assert np.all(np.diff(cum) >= 0)
    assert cum[-1] == counter.attention_macs


def test_halting_report_forced_one(tmp_path):
    cfg = tiny_config(max_steps=4)
    model = Papez(cfg, seed=0)
    x = np.random.default_rng(5).uniform(-1, 1, 800)
    _, trace = model(x, p_override=1.0)
    report = halting_report([trace])
    assert report["mean_depth"] == 1.0
    assert report["savings"] == pytest.approx((4 - 1) / 4)
    write_report_csv(tmp_path / "r.csv", report)
    assert "savings" in (tmp_path / "r.csv").read_text()


def test_halting_report_no_halting():
    cfg = tiny_config(max_steps=3, p_th=1.0)
    _, trace = Papez(cfg, seed=0)(np.random.default_rng(5).uniform(-1, 1, 800), p_override=0.1)
    report = halting_report([trace])
    assert report["savings"] == 0.0
    assert report["mean_depth"] == 3.0
    with pytest.raises(ValueError):
        halting_report([])


def test_padded_slots_report_depth_zero():
    cfg = tiny_config(chunk_size=16)
    _, trace = Papez(cfg, seed=0)(np.random.default_rng(5).uniform(-1, 1, 800))
    slots = halting_report([trace])["slot_depths"][0]
    T = trace.state.n_tokens
    assert T % 16 != 0
    assert np.all(slots[T:] == 0) and np.all(slots[:T] >= 1)


def test_complexity_table_has_four_rows():
    text = complexity_table(1500, 150, 16, 256)
    assert len(text.strip().splitlines()) >= 5
    assert "AWM" in text
