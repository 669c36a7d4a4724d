import numpy as np
import pytest

from entmark import _alignment_py
from entmark.coding import build_codes, build_huffman_codes
from entmark.detection import (DetectionConfig, HAVE_COMPILED, cost_bs, cost_its,
                               detect_pvalue, detect_seed_scan, eta, h_hard, h_soft,
                               h_values, min_block_cost, phi, replay_boundary)
from entmark.generation import generate, key_sequence_for
from entmark.keys import SeedBlock, derive_key_sequence, resample_key_sequence
from entmark.lm import skewed_lm, uniform_lm
from entmark.sampling import sample_bs_many
from oracles import brute_min_block_cost


def test_eta():
    assert eta([0], 4)[0] == 0.0
    assert eta([3], 4)[0] == 1.0
    assert eta([2], 4)[0] == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        eta([4], 4)
    with pytest.raises(ValueError):
        eta([0], 1)


def test_h_hard_examples():
    code = build_codes(4)
    assert h_hard([[0.7, 0.3]], code)[0] == pytest.approx(2 / 3)
    assert h_hard([[0.1, 0.4]], code)[0] == 0.0
    assert h_hard([[0.9, 0.8]], code)[0] == 1.0
    # non-power-of-two: pattern 11 clamps to the last valid word
    code3 = build_codes(3)
    assert h_hard([[0.9, 0.9]], code3)[0] == 1.0
    assert h_hard([[0.9, 0.1]], code3)[0] == 1.0  # "10" -> token 2 -> eta 1


def test_h_hard_mean_half_power_of_two():
    rng = np.random.default_rng(0)
    code = build_codes(8)
    h = h_hard(rng.random((100_000, 3)), code)
    assert abs(h.mean() - 0.5) <= 3 * h.std() / np.sqrt(h.size)


def test_h_soft_uniform_and_interval():
    rng = np.random.default_rng(1)
    code = build_codes(8)
    u = rng.random((100_000, 3))
    h = h_soft(u, code)
    assert h.min() >= 0 and h.max() < 1
    assert abs(h.mean() - 0.5) <= 3 * h.std() / np.sqrt(h.size)
    # under a uniform model the soft value lands inside the CDF interval of
    # the very token those uniforms sample
    probs = np.full(8, 1 / 8)
    toks = sample_bs_many(probs, code, u)
    assert np.all((h >= toks / 8) & (h < (toks + 1) / 8))


def test_h_soft_huffman_walk():
    code = build_huffman_codes([4, 2, 1, 1])
    rng = np.random.default_rng(2)
    h = h_soft(rng.random((20_000, code.max_bits)), code)
    assert h.min() >= 0 and h.max() < 1
    assert abs(h.mean() - 0.5) < 0.01
    hh = h_hard(rng.random((1000, code.max_bits)), code)
    assert set(np.round(hh * 3).astype(int)) <= {0, 1, 2, 3}
    with pytest.raises(ValueError):
        h_values(resample_key_sequence(rng, "bs", 3, 4, 2), build_codes(4), "warm")


def test_cost_its_examples():
    # single token, u=0.9, identity ranks, last token: -(0.4)(0.5)
    assert cost_its([3], [0.9], [[0, 1, 2, 3]], 4) == pytest.approx(-0.2)
    assert cost_its([2], [0.5], [[0, 1, 2, 3]], 4) == 0.0
    assert cost_its([], [], np.empty((0, 4)), 4) == 0.0
    with pytest.raises(ValueError):
        cost_its([1, 2], [0.5], [[0, 1, 2, 3]], 4)


def test_cost_bs_examples():
    # eta(y)=1 and h=2/3: -(1/6)(1/2)
    assert cost_bs([3], [2 / 3], 4) == pytest.approx(-1 / 12)
    assert cost_bs([2], [0.5], 4) == 0.0
    assert cost_bs([1], [0.9], 3) == 0.0  # middle token of odd N is centered
    assert cost_bs([], [], 4) == 0.0


def test_phi_single_block_reduces_to_cost():
    rng = np.random.default_rng(3)
    y = rng.integers(4, size=6)
    ks = resample_key_sequence(rng, "its", 1, 4, 2)
    got = phi(y, ks, k=6, n_vocab=4)
    # n=1 wraps the single element across the block
    manual = cost_its(y, np.repeat(ks.u, 6), np.tile(ks.ranks[0], (6, 1)), 4)
    assert got.value == pytest.approx(manual)
    assert (got.best_i, got.best_j) == (0, 0)


def test_phi_matches_brute_force():
    rng = np.random.default_rng(4)
    code = build_codes(5)
    for _ in range(40):
        n_vocab = 5
        length = int(rng.integers(2, 12))
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, length + 1))
        y = rng.integers(n_vocab, size=length)
        kind = "its" if rng.random() < 0.5 else "bs"
        ks = resample_key_sequence(rng, kind, n, n_vocab, code.max_bits)
        if kind == "its":
            et = ks.ranks[:, y] / (n_vocab - 1)
            m = -((ks.u - 0.5)[:, None] * (et - 0.5))
        else:
            h = h_soft(ks.u, code)
            m = -np.outer(h - 0.5, y / (n_vocab - 1) - 0.5)
        want = brute_min_block_cost(m, k)
        got = phi(y, ks, k, n_vocab, code)
        assert got.value == pytest.approx(want[0], abs=1e-9)
        assert (got.best_i, got.best_j) == (want[1], want[2])


def test_phi_zero_costs_tie_break():
    val, i, j = min_block_cost(np.zeros((4, 7)), 3)
    assert (val, i, j) == (0.0, 0, 0)


def test_phi_errors():
    rng = np.random.default_rng(5)
    ks = resample_key_sequence(rng, "its", 3, 4, 2)
    with pytest.raises(ValueError, match="shorter than block"):
        phi([1, 2], ks, k=3, n_vocab=4)
    empty = resample_key_sequence(rng, "its", 0, 4, 2)
    with pytest.raises(ValueError):
        phi([1, 2, 3], empty, k=2, n_vocab=4)


def test_phi_superset_of_offsets_never_worse():
    # phi searches every key offset; restricting the offsets by hand can
    # only raise the minimum
    rng = np.random.default_rng(6)
    for _ in range(20)	:
        m = rng.standard_normal((6, 9))
        k = int(rng.integers(1, 9))
        full = min_block_cost(m, k)[0]
        subset = min(
            sum(m[(j + l) % 6, i + l] for l in range(k))
            for i in range(9 - k + 1)
            for j in (0, 2, 5)
        )
        assert full <= subset + 1e-12


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernel unavailable")
def test_backends_bitwise_equal():
    rng = np.random.default_rng(7)
    for _ in range(60):
        n = int(rng.integers(1, 40))
        length = int(rng.integers(1, 60))
        k = int(rng.integers(1, length + 1))
        m = rng.standard_normal((n, length))
        a = min_block_cost(m, k, "compiled")
        b = min_block_cost(m, k, "python")
        assert a == b  # exact float equality, same tie-break


def test_detect_pvalue_formula_and_strong_case():
    lm = uniform_lm(8)
    res = generate(lm, [], 1.0, 80, "its", b"salt", np.random.default_rng(8))
    ks = key_sequence_for(res, lm.size)
    config = DetectionConfig(cost="its", T=49)
    rep = detect_pvalue(res.tokens, ks, config, np.random.default_rng(0), lm.size)
    assert rep.p_value == pytest.approx(1 / 50)  # every null loses
    assert rep.p_value == (1 + np.sum(rep.phi_null <= rep.phi0)) / (config.T + 1)
    assert rep.k == 50 and rep.cost == "its" and rep.mode == "key"


def test_detect_pvalue_bs():
    lm = uniform_lm(4)
    code = build_codes(4)
    res = generate(lm, [], 1.0, 80, "bs", b"salt", np.random.default_rng(9), code=code)
    ks = key_sequence_for(res, lm.size, code=code)
    rep = detect_pvalue(res.tokens, ks, DetectionConfig(cost="bs", T=49),
                        np.random.default_rng(1), lm.size, code=code)
    assert rep.p_value == pytest.approx(1 / 50)


def test_detect_kind_mismatch():
    rng = np.random.default_rng(10)
    ks = resample_key_sequence(rng, "its", 10, 4, 2)
    with pytest.raises(ValueError, match="does not match"):
        detect_pvalue(rng.integers(4, size=10), ks, DetectionConfig(cost="bs"), rng, 4,
                      code=build_codes(4))
    with pytest.raises(ValueError):
        DetectionConfig(cost="its", T=0).validate()
    with pytest.raises(ValueError):
        DetectionConfig(cost="levenshtein").validate()


def test_seed_scan_single_candidate_reduces_to_detect():
    rng = np.random.default_rng(11)
    y = rng.integers(4, size=60).tolist()
    config = DetectionConfig(cost="its", T=19, s_max=0, k=40)
    scan = detect_seed_scan(y, config, b"tea", 4, np.random.default_rng(42))
    ks = derive_key_sequence(SeedBlock((), b"tea"), "its", 60, 4, 2)
    manual = detect_pvalue(y, ks, config, np.random.default_rng(42), 4)
    assert scan.p_value == pytest.approx(manual.p_value)  # C = 1
    assert scan.boundary == 0 and scan.mode == "scan"


def test_seed_scan_finds_generation_boundary():
    lm = skewed_lm(4)
    res = generate(lm, [], 1.0, 120, "its", b"scan-salt", np.random.default_rng(12))
    assert res.boundary is not None and res.boundary <= 5
    config = DetectionConfig(cost="its", T=99, s_max=6, k=50)
    rep = detect_seed_scan(res.tokens, config, b"scan-salt", lm.size,
                           np.random.default_rng(13), lm=lm, lam=1.0)
    n_candidates = 7
    assert rep.boundary == res.boundary
    assert rep.p_value <= n_candidates / 100 + 1e-12
    assert rep.entropy_boundary == res.boundary
    assert [c["s"] for c in rep.scanned] == list(range(7))


def test_seed_scan_null_calibration():
    # text independent of every candidate key: the corrected p-value is
    # family-wise valid, so small values stay rare
    rng = np.random.default_rng(16)
    config = DetectionConfig(cost="its", T=19, s_max=3, k=30)
    pvals = [
        detect_seed_scan(rng.integers(4, size=60), config, rng.bytes(8), 4,
                         np.random.default_rng(100 + i)).p_value
        for i in range(8)
    ]
    assert np.median(pvals) > 0.2
    assert sum(p <= 0.05 for p in pvals) <= 1


def test_seed_scan_too_short():
    config = DetectionConfig(cost="its", T=9, k=50)
    y = ([0, 1, 2, 3] * 13)[:51]  # k + 1 tokens: no room to scan
    with pytest.raises(ValueError, match="too short"):
        detect_seed_scan(y, config, b"x", 4, np.random.default_rng(0))


def test_replay_boundary_matches_generation():
    lm = skewed_lm(4)
    rng = np.random.default_rng(14)
    for lam in (0.0, 0.7, 2.5):
        res = generate(lm, [], lam, 30, "its", rng.bytes(8), rng)
        assert replay_boundary(lm, res.tokens, lam) == res.boundary
    assert replay_boundary(lm, [0, 1], 99.0) is None


def test_fallback_oracle_agreement():
    rng = np.random.default_rng(15)
    m = rng.standard_normal((5, 11))
    for k in (1, 4, 11):
        assert _alignment_py.min_block_cost(m, k) == pytest.approx(brute_min_block_cost(m, k))
