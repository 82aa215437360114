import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smearing.peeling import peel
from smearing.wavelet_ffast import (
    DecodeError,
    HypothesisList,
    ObservationSet,
    SparseVector,
    StageObservation,
    WaveletProblem,
    acquire,
    acquire_sparse,
    basis_aware_peel,
    bench,
    coprime_factors,
    goodify_stage,
    haar1_analyze,
    haar1_synthesize,
    induced_graph,
    run_instance,
    verify,
)

R2 = np.sqrt(2.0)


def spike(n, p, v=1.0):
    return SparseVector(n, [p], [v])


def test_haar_single_coefficients():
    x0 = haar1_synthesize(spike(8, 0).to_dense())
    np.testing.assert_allclose(x0, [1 / R2, 1 / R2, 0, 0, 0, 0, 0, 0])
    x1 = haar1_synthesize(spike(8, 1).to_dense())
    np.testing.assert_allclose(x1, [1 / R2, -1 / R2, 0, 0, 0, 0, 0, 0])


def test_haar_round_trip():
    rng = np.random.default_rng(0)
    a = rng.normal(size=60) + 1j * rng.normal(size=60)
    assert np.max(np.abs(haar1_analyze(haar1_synthesize(a)) - a)) < 1e-12
    assert np.max(np.abs(haar1_synthesize(haar1_analyze(a)) - a)) < 1e-12
    # orthonormal: energy is preserved
    assert np.linalg.norm(haar1_synthesize(a)) == pytest.approx(np.linalg.norm(a))


def test_haar_needs_even_length():
    with pytest.raises(ValueError):
        haar1_synthesize(np.ones(5))
    with pytest.raises(ValueError):
        haar1_analyze(np.ones(7))


def test_acquire_constant_signal():
    obs = acquire(np.ones(60), (4, 3, 5))
    np.testing.assert_allclose(obs.stages[0].y0, np.full(4, 15.0), atol=1e-12)
    assert obs.count == 2 * (4 + 3 + 5)
    assert obs.factors == (4, 3, 5)
    assert [s.kind for s in obs.stages] == ["good", "bad", "bad"]


def test_acquire_folds_time_samples():
    rng = np.random.default_rng(1)
    x = rng.normal(size=60) + 1j * rng.normal(size=60)
    y = acquire(x, (5,)).stages[0].y0
    fold = np.array([x[i::5].sum() for i in range(5)])
    assert np.max(np.abs(y - fold)) < 1e-9


def test_acquire_spike_ratio():
    x = np.zeros(60)
    x[7] = 1.0
    stage = acquire(x, (4,)).stages[0]
    assert stage.y0[3] == pytest.approx(1.0)
    assert stage.y1[3] / stage.y0[3] == pytest.approx(np.exp(-2j * np.pi * 7 / 60))
    assert np.allclose(np.delete(stage.y0, 3), 0)


def test_acquire_rejects_non_divisor():
    with pytest.raises(ValueError):
        acquire(np.ones(60), (7,))
    with pytest.raises(ValueError):
        acquire_sparse(spike(60, 3), (8,))


@pytest.mark.parametrize("factors", [(4, 3, 5), (8, 7, 9), (10, 3, 7)])
def test_sparse_acquisition_matches_fft(factors):
    prob = WaveletProblem.random(factors, 6, seed=3)
    full = acquire(haar1_synthesize(prob.alpha.to_dense()), factors)
    fast = acquire_sparse(prob.alpha, factors)
    for a, b in zip(full.stages, fast.stages):
        np.testing.assert_allclose(a.y0, b.y0, atol=1e-10)
        np.testing.assert_allclose(a.y1, b.y1, atol=1e-10)
        np.testing.assert_array_equal(a.idx0, b.idx0)


def test_acquisition_is_linear():
    rng = np.random.default_rng(5)
    a = rng.normal(size=60)
    b = rng.normal(size=60)
    oa, ob, oab = (acquire(v, (4, 3, 5)) for v in (a, b, 2 * a - 3 * b))
    for sa, sb, sab in zip(oa.stages, ob.stages, oab.stages):
        np.testing.assert_allclose(sab.y0, 2 * sa.y0 - 3 * sb.y0, atol=1e-10)
        np.testing.assert_allclose(sab.y1, 2 * sa.y1 - 3 * sb.y1, atol=1e-10)


@pytest.mark.parametrize("p", [0, 1, 7, 22, 59])
def test_goodify_single_coefficient(p):
    n, f = 60, 4
    v = 0.7 - 1.1j
    stage = acquire_sparse(spike(n, p, v), (f,)).stages[0]
    y = goodify_stage(stage.y0)
    expect = np.zeros(f, complex)
    expect[p % f] = v
    np.testing.assert_allclose(y, expect, atol=1e-12)
    shifted = goodify_stage(stage.y1, n=n, shifted=True)
    expect[p % f] = v * np.exp(-2j * np.pi * 2 * (p // 2) / n)
    np.testing.assert_allclose(shifted, expect, atol=1e-12)


def test_goodify_zero_and_collision():
    assert np.all(goodify_stage(np.zeros(4)) == 0)
    alpha = SparseVector(60, [3, 7], [1.0, 2.0j])
    y = goodify_stage(acquire_sparse(alpha, (4,)).stages[0].y0)
    assert y[3] == pytest.approx(1.0 + 2.0j)
    with pytest.raises(ValueError):
        goodify_stage(np.ones(3))
    with pytest.raises(ValueError):
        goodify_stage(np.ones(4), shifted=True)


def test_sparse_vector_basics():
    v = SparseVector(10, [5, 2], [1.0, 2.0])
    assert v.indices.tolist() == [2, 5] and v.K == 2
    assert SparseVector.from_dense(v.to_dense()).indices.tolist() == [2, 5]
    assert SparseVector.from_text(v.to_text()).to_dense().tolist() == v.to_dense().tolist()
    with pytest.raises(ValueError):
        SparseVector(10, [1, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        SparseVector(10, [10], [1.0])


def test_problem_validation():
    with pytest.raises(ValueError):
        WaveletProblem.random((4, 6, 5), 2)  # not coprime
    with pytest.raises(ValueError):
        WaveletProblem.random((3, 4, 5), 2)  # first factor odd
    with pytest.raises(ValueError):
        WaveletProblem.random((4, 3, 5), 31, one_per_block=True)
    prob = WaveletProblem.random((4, 3, 5), 30, seed=1, one_per_block=True)
    assert len(set((prob.alpha.indices // 2).tolist())) == 30
    mags = np.abs(prob.alpha.values)
    assert np.all((mags >= 1.0) & (mags < 2.0))


def test_induced_graph_single_coefficient():
    prob = WaveletProblem((4, 3, 5), spike(60, 13))
    g = induced_graph(prob)
    assert g.adjacency.shape == (1, 5)
    assert g.bins_of(0) == [1, 4 + 0, 4 + 1, 7 + 2, 7 + 3]
    assert peel(g).success


def test_two_coefficients_never_fully_collide():
    # sharing every bin would force p = q by the Chinese remainder theorem
    n = 60
    for p in range(n):
        for q in range(p + 1, n):
            g = induced_graph(WaveletProblem((4, 3, 5), SparseVector(n, [p, q], [1.0, 2.0])))
            assert peel(g).success


def test_crafted_stopping_set():
    # 0, 20, 40 share good bin 0; their blocks 0, 10, 20 cover the three
    # odd pairs of stage 3 pairwise and coincide in stage 5
    prob = WaveletProblem((4, 3, 5), SparseVector(60, [0, 20, 40], [1.0, 1.5, -1.2]))
    g = induced_graph(prob)
    assert not peel(g).success
    res, ver, _ = run_instance(prob)
    assert not res.complete and not ver.exact


@pytest.mark.parametrize("p", [0, 1, 17, 30, 59])
def test_single_coefficient_recovery(p):
    prob = WaveletProblem((4, 3, 5), spike(60, p, 1.3 * np.exp(0.4j)))
    res, ver, _ = run_instance(prob)
    assert res.complete and ver.exact and ver.max_err < 1e-12


def test_small_instances_match_graph():
    for seed in range(100):
        prob = WaveletProblem.random((4, 3, 5), 3, seed=seed, one_per_block=True)
        res, ver, _ = run_instance(prob)
        graph_ok = peel(induced_graph(prob)).success
        assert (res.complete and ver.exact) == graph_ok
        if res.complete:
            assert ver.max_err < 1e-9


def test_larger_instances_match_graph():
    agree = 0
    for seed in range(100):
        prob = WaveletProblem.random((28, 27, 25), 50, seed=seed, one_per_block=True)
        res, ver, _ = run_instance(prob)
        agree += (res.complete and ver.exact) == peel(induced_graph(prob)).success
    assert agree == 100


def test_uniform_supports_never_worse_than_graph():
    # two active coefficients of one block can only help the decoder
    for seed in range(300):
        prob = WaveletProblem.random((4, 3, 5), 6, seed=seed)
        res, ver, _ = run_instance(prob)
        if peel(induced_graph(prob)).success:
            assert res.complete and ver.exact
        if res.complete:
            assert ver.exact


def test_cancelling_pair_is_never_a_silent_error():
    n = 60
    for p in range(0, n, 3):
        for q in range(p + 4, n, 4):
            prob = WaveletProblem((4, 3, 5), SparseVector(n, [p, q], [1.5, -1.5]))
            res, ver, _ = run_instance(prob)
            assert not res.complete or ver.exact


def test_real_values_and_sparse_path():
    prob = WaveletProblem.random((8, 7, 9), 12, seed=2, complex_values=False, one_per_block=True)
    dense = run_instance(prob)
    sparse = run_instance(prob, sparse=True)
    assert dense[0].complete == sparse[0].complete
    assert dense[1].support_match == sparse[1].support_match


def test_corrupted_singleton_raises():
    n = 60
    obs = acquire(haar1_synthesize(spike(n, 7).to_dense()), (4, 3, 5))
    good, bad3, bad5 = obs.stages
    silent = StageObservation(good.f, np.zeros(4, complex), np.zeros(4, complex), good.idx0, good.idx1)
    # move the shifted phase of stage 3 by one time step, off its alias class
    y1 = bad3.y0 * np.exp(-2j * np.pi * 9 / n)
    broken = StageObservation(bad3.f, bad3.y0, y1, bad3.idx0, bad3.idx1)
    with pytest.raises(DecodeError, match="does not alias"):
        basis_aware_peel(ObservationSet(n, (silent, broken, bad5)))


def test_round_cap_gives_partial_result():
    obs = acquire_sparse(WaveletProblem.random((4, 3, 5), 3, seed=0).alpha, (4, 3, 5))
    res = basis_aware_peel(obs, K=3, C=0)
    assert not res.complete and res.rounds == 0 and res.alpha_hat.K == 0


def test_empty_signal_is_complete():
    obs = acquire(np.zeros(60), (4, 3, 5))
    res = basis_aware_peel(obs)
    assert res.complete and res.alpha_hat.K == 0


def test_hypothesis_list():
    h = HypothesisList()
    h.add((1, 0), 5)
    h.add((1, 0), 2)
    h.add((2, 1), 5)
    assert h.at((1, 0)) == [2, 5] and len(h) == 3
    h.discard((1, 0), 5)
    h.discard((1, 0), 2)
    h.discard((9, 9), 1)
    assert h.at((1, 0)) == [] and len(h) == 1


def test_verify_examples():
    a = SparseVector(20, [1, 4], [1.0, 2.0])
    assert verify(a, a).exact and verify(a, a).max_err == 0
    moved = SparseVector(20, [1, 5], [1.0, 2.0])
    assert not verify(moved, a).support_match
    nudged = SparseVector(20, [1, 4], [1.0 + 1e-10, 2.0])
    r = verify(nudged, a)
    assert r.support_match and r.max_err == pytest.approx(1e-10, rel=1e-3)
    dense = verify(nudged.to_dense(), a.to_dense())
    assert dense.max_err == pytest.approx(1e-10, rel=1e-3)
    with pytest.raises(ValueError):
        verify(SparseVector(10, [], []), a)


def test_coprime_factors():
    for target in (3, 10, 57, 1000):
        f1, f2, f3 = coprime_factors(target)
        assert f1 % 2 == 0
        assert np.gcd(f1, f2) == np.gcd(f1, f3) == np.gcd(f2, f3) == 1


def test_bench_rows():
    rows = bench(Ks=(64, 128), ratio=2.0)
    assert [r["K"] for r in rows] == [64, 128]
    assert all(r["success"] and r["seconds"] > 0 for r in rows)
    assert sorted(r["c_ratio"] for r in rows)[0] <= 1.0 <= sorted(r["c_ratio"] for r in rows)[-1]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 12))
def test_equivalence_property(seed, K):
    prob = WaveletProblem.random((8, 7, 9), K, seed=seed, one_per_block=True)
    res, ver, _ = run_instance(prob, sparse=True)
    assert (res.complete and ver.exact) == peel(induced_graph(prob)).success
