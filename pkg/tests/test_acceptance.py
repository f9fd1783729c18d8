"""Acceptance suite: one test per criterion, reported in the terminal summary."""

import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from papez import autodiff as ad
from papez.audit import OpCounter, fit_scaling_exponent, predict_macs
from papez.autodiff import Tensor, load_arrays
from papez.autodiff.gradcheck import run_primitive_checks
from papez.bench import end_to_end_spot_checks, measure_iteration, sweep, sweep_exponent
from papez.config import PapezConfig, TrainConfig
from papez.datagen import MixSpec, synth_mixture
from papez.frontend import Waveform, encoded_frames
from papez.halting import survival_curve
from papez.model import Papez
from papez.objective import si_snr, si_snr_i, upit_loss
from papez.train import eval_template, evaluate, train
from papez.wavio import read_wav, write_wav

from conftest import tiny_config, toy_config
from halting_oracle import drive, load_hand_traces, reference_weights

criterion = pytest.mark.criterion


@pytest.fixture(scope="module")
def toy_run():
    """The toy model trained for 2000 steps with the default optimizer settings."""
    ad.set_precision("f32")
    cfg = TrainConfig(seed=0, steps=2000)
    start = time.perf_counter()
    result = train(toy_config(), cfg)
    return result, cfg, time.perf_counter() - start


# -- 1 ---------------------------------------------------------------------------

@criterion(1, "halting weights sum to one on 1000 random traces per threshold (f32)")
def test_c1_halting_normalization():
    start = time.perf_counter()
    r = np.random.default_rng(2024)
    steps, T = 16, 1000
    # a third arbitrary, a third tiny (forced to finalize at N), a third large
    ps = np.concatenate([r.uniform(0.0, 1.0, (steps, T // 3)),
                         r.uniform(0.0, 0.03, (steps, T // 3)),
                         r.uniform(0.5, 1.0, (steps, T - 2 * (T // 3)))], axis=1)
    for threshold in (0.5, 0.9, 0.99):
        state, _ = drive(ps, threshold, dtype=np.float32, seed=int(threshold * 100))
        assert state.P.dtype == np.float32
        forced = state.halt_step == steps + 1
        assert forced.sum() >= T // 3
        assert np.all(np.abs(state.weight_sums() - 1.0) <= 1e-6)
        assert np.all(state.P.data == 1.0)
    assert time.perf_counter() - start < 10.0


# -- 2 ---------------------------------------------------------------------------

@criterion(2, "hand traces for constant p=0.4 and p=0.5 at P_th=0.9")
def test_c2_hand_traces():
    traces = {t["name"]: t for t in load_hand_traces()}
    for name, t in traces.items():
        p, th = Fraction(t["p"]), Fraction(t["threshold"])
        applied, evaluations, _ = reference_weights([p] * t["max_steps"], th, t["max_steps"])
        assert [w for _, w in applied if w != 0] == [Fraction(w) for w in t["weights"]]
        assert evaluations == t["evaluations"]

        # the implementation under float arithmetic: bit-equal to the float recurrence
        ps = np.full((t["max_steps"], 1), float(p))
        state, _ = drive(ps, float(th))
        float_weights, _, _ = reference_weights([float(p)] * t["max_steps"], float(th), t["max_steps"],
                                                number=float)
        assert state.weights_of(0) == [w for _, w in float_weights if w != 0]
        assert [abs(Fraction(w) - Fraction(e)) <= Fraction(1, 2 ** 50)
                for w, e in zip(state.weights_of(0), t["weights"])] == [True] * len(t["weights"])
        assert int(state.depth[0]) == t["evaluations"]
        assert int(state.halt_step[0]) == t["halt_step"]

    # the full model: the shared layer runs exactly 3 and 2 times
    model = Papez(tiny_config(max_steps=16, p_th=0.9), seed=0)
    x = np.random.default_rng(0).uniform(-0.5, 0.5, 600)
    for p, expected_weights, evaluations in ((0.4, (0.4, 0.4, 0.4, -0.2), 3), (0.5, (0.5, 0.5), 2)):
        counter = OpCounter()
        _, trace = model(x, counter=counter, p_override=p)
        assert counter.iterations == evaluations
        assert np.all(trace.state.depth == evaluations)
        for token in (0, trace.state.n_tokens - 1):
            np.testing.assert_allclose(trace.state.weights_of(token), expected_weights, rtol=0, atol=1e-6)


# -- 3 ---------------------------------------------------------------------------

@criterion(3, "gradients of primitives < 1e-4 and end-to-end tiny model < 1e-3 (f64)")
def test_c3_gradient_correctness():
    start = time.perf_counter()
    worst = run_primitive_checks()
    failing = {k: v for k, v in worst.items() if not v < 1e-4}
    assert not failing, failing
    cfg = PapezConfig(hidden=32, heads=4, n_memory=4, chunk_size=16, max_steps=3, ffn_hidden=64,
                      enc_channels=32)
    checks = end_to_end_spot_checks(cfg, length=512, n_coords=20, seed=0)
    assert len(checks) >= 20
    bad = [(c.name, c.index, c.error) for c in checks if not c.error < 1e-3]
    assert not bad, bad
    assert time.perf_counter() - start < 300.0


# -- 4 ---------------------------------------------------------------------------

@criterion(4, "attention MAC counters match the closed form; N-sweep exponents")
def test_c4_complexity():
    start = time.perf_counter()
    cfg = PapezConfig(max_steps=2, pruning=False)
    H, K, M = cfg.hidden, cfg.chunk_size, cfg.n_memory
    assert (H, K, M) == (256, 150, 16)
    closed_form = Fraction(1500, K) * (K + M) ** 2 * H ** 2
    assert measure_iteration(cfg, 1500).attention_macs == closed_form == 18_059_100_160

    # the whole model with pruning off: every iteration hits the closed form
    length = 8 * 1499 + 16
    assert encoded_frames(length) == 1500
    counter = OpCounter()
    with ad.no_grad():
        Papez(cfg, seed=0)(np.random.default_rng(0).uniform(-0.5, 0.5, length), counter=counter)
    assert counter.iterations == 2
    assert counter.attention_macs_per_iter == [closed_form] * 2

    points = sweep(cfg, "N", [1000, 2000, 4000, 8000, 16000])
    assert all(p.measured == p.predicted for p in points if p.n_tokens % K == 0)
    assert 0.95 <= sweep_exponent(points) <= 1.1

    ns = [1000, 2000, 4000, 8000, 16000]
    dual = [(n, predict_macs("dual_path_full", n, math.sqrt(n), 0, H)) for n in ns]
    assert 1.45 <= fit_scaling_exponent(dual) <= 1.55
    assert time.perf_counter() - start < 120.0


# -- 5 ---------------------------------------------------------------------------

@criterion(5, "FFN tokens per iteration equal active tokens plus memory slots")
def test_c5_ffn_accounting():
    cfg = PapezConfig(max_steps=2, pruning=False)
    counter = measure_iteration(cfg, 1500)
    assert counter.ffn_tokens_per_iter == [1500 + 16]
    share = Fraction(counter.ffn_tokens, 2 * 1500)
    assert share == Fraction(1500 + 16, 2 * 1500)
    # 1516 / 3000 = 50.53...%, quoted as 50.5% to one decimal
    assert round(100 * share, 1) == Fraction(505, 10)

    # with pruning the count follows the computing set at every iteration
    model = Papez(tiny_config(max_steps=6, p_th=0.9), seed=3)
    x = np.random.default_rng(1).uniform(-0.5, 0.5, 1600)
    counter = OpCounter()
    _, trace = model(x, counter=counter)
    computed = [int(c.sum()) for c in trace.state.computed if c.any()]
    assert counter.active_per_iter == computed
    assert counter.ffn_tokens_per_iter == [a + model.cfg.n_memory for a in computed]


# -- 6 ---------------------------------------------------------------------------

@criterion(6, "depth N changes parameters only through per-step LN affines")
def test_c6_parameter_sharing():
    small, large = Papez(PapezConfig(max_steps=4)), Papez(PapezConfig(max_steps=16))
    assert large.num_parameters() - small.num_parameters() == 2 * 12 * 2 * 256 == 12288

    def shared(model):
        return {n: p.size for n, p in model.named_parameters() if ".ln_" not in n}

    assert shared(small) == shared(large)
    for name in ("wq", "wk", "wv", "wo", "ffn1", "ffn2"):
        key = f"masking.layer.{name}.weight"
        assert shared(small)[key] == shared(large)[key]


# -- 7 ---------------------------------------------------------------------------

@criterion(7, "toy model: held-out mean SI-SNRi > 3 dB and > 0 dB on >= 95% of 100 items")
def test_c7_toy_separation(toy_run):
    result, cfg, seconds = toy_run
    assert (cfg.lr, cfg.weight_decay, cfg.clip_norm, cfg.lr_decay) == (1e-4, 1e-4, 1.0, 0.98)
    assert len(result.history) == 2000
    ev = evaluate(result.model, eval_template(cfg), 100)
    print(f"toy model: mean SI-SNRi {ev.mean_si_snr_i:.2f} dB, "
          f"{100 * ev.fraction_above(0.0):.0f}% above 0 dB, trained in {seconds:.0f} s")
    assert ev.si_snr_i.shape == (100,)
    assert ev.mean_si_snr_i > 3.0
    assert ev.fraction_above(0.0) >= 0.95
    assert seconds <= 3600


# -- 8 ---------------------------------------------------------------------------

@criterion(8, "metric invariances and three-source uPIT brute force")
def test_c8_metric_invariances():
    ad.set_precision("f64")
    r = np.random.default_rng(8)
    for _ in range(20):
        ref, est = r.standard_normal(400), r.standard_normal(400)
        est = est + 0.7 * ref
        base = si_snr(est, ref)
        for alpha in (0.1, 1.0, 10.0):
            assert abs(si_snr(alpha * est, ref) - base) <= 1e-6
        mix = ref + r.standard_normal(400)
        assert si_snr_i(mix, ref, mix) == 0.0

    refs = [r.standard_normal(200) for _ in range(3)]
    ests = [Tensor(refs[k] * 0.9 + 0.5 * r.standard_normal(200)) for k in (1, 2, 0)]
    result = upit_loss(ests, refs)
    for perm in itertools.permutations(range(3)):
        assert upit_loss([ests[i] for i in perm], refs).value == result.value
    brute = max(itertools.permutations(range(3)),
                key=lambda perm: sum(si_snr(ests[perm[j]].data, refs[j]) for j in range(3)))
    assert result.n_permutations == 6
    assert result.assignment == brute
    assert result.value == pytest.approx(-np.mean([si_snr(ests[brute[j]].data, refs[j]) for j in range(3)]),
                                         abs=1e-9)


# -- 9 ---------------------------------------------------------------------------

@criterion(9, "attention MACs non-decreasing in P_th; survival curves non-increasing")
def test_c9_pruning_monotonicity(toy_run):
    result, cfg, _ = toy_run
    state = result.model.state_dict()
    mixture, _ = synth_mixture(MixSpec(seed=cfg.seed + cfg.eval_seed_offset, duration=cfg.duration))
    macs = []
    for threshold in (0.5, 0.7, 0.9, 0.99):
        model = Papez(result.model.cfg.replace(p_th=threshold), seed=cfg.seed)
        model.load_state_dict(state)
        counter = OpCounter()
        with ad.no_grad():
            _, trace = model(mixture.samples, counter=counter)
        curve = survival_curve(trace.state)
        assert np.all(np.diff(curve) <= 0.0), (threshold, curve)
        print(f"P_th={threshold}: attention MACs {counter.attention_macs}, survival {np.round(curve, 3)}")
        macs.append(counter.attention_macs)
    assert all(a <= b for a, b in zip(macs, macs[1:])), macs


# -- 10 --------------------------------------------------------------------------

@criterion(10, "WAV within 1 LSB, checkpoint bit-identical, same-seed losses identical")
def test_c10_io_bit_exactness(tmp_path):
    r = np.random.default_rng(10)
    wave = Waveform(r.uniform(-1.0, 1.0, 8000))
    write_wav(tmp_path / "a.wav", wave)
    back = read_wav(tmp_path / "a.wav")
    assert len(back) == len(wave)
    assert np.abs(back.samples - wave.samples).max() <= 1.0 / 32768

    model = Papez(tiny_config(), seed=4)
    model.save(tmp_path / "m.ckpt")
    clone = Papez(tiny_config(), seed=99)
    clone.load(tmp_path / "m.ckpt")
    clone.save(tmp_path / "m2.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()
    saved = load_arrays(tmp_path / "m.ckpt")
    assert all(saved[n].tobytes() == p.data.tobytes() for n, p in clone.named_parameters())

    runs = [train(toy_config(), TrainConfig(seed=7, steps=11)) for _ in range(2)]
    losses = [[h.loss for h in run.history] for run in runs]
    assert len(losses[0]) == 11
    assert losses[0] == losses[1]
