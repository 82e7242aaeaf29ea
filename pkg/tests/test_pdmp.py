import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cogflow.pdmp import (
    EnsembleSnapshot,
    JumpLog,
    atom_weight,
    sample_initial,
    sample_transition,
    simulate_continuous,
    simulate_discrete,
    simulate_ensemble,
    step_discrete,
    write_jump_log_csv,
    write_snapshot_csv,
)
from cogflow.rng import RngStreams

from conftest import model, zero_field


def transport_2d(rate=1e-12, m=2):
    return model(
        dim=2,
        domain=[[-5, 5], [-5, 5]],
        n_cognitive=m,
        velocity={"family": "constant-per-y", "constants": [[1.0, 0.0]] * m},
        kernel={"family": "uniform"},
        rate=rate,
        initial={"family": "point", "point": [0.0, 0.0]},
    )


def test_point_initial_density():
    snap = sample_initial(transport_2d(), 100, RngStreams(1))
    assert np.all(snap.x == 0.0)
    assert np.all(snap.tau == 0.0)


def test_uniform_box_mean_within_clt_bound():
    spec = zero_field(dim=2, initial={"family": "uniform-box"})
    n = 10**6
    snap = sample_initial(spec, n, RngStreams(2))
    sd = 6.0 / np.sqrt(12.0)
    assert np.all(np.abs(snap.x.mean(0)) < 4 * sd / np.sqrt(n))
    assert np.all(spec.inside(snap.x))


def test_point_mass_kernel_shared_state():
    spec = zero_field(m=3, kernel={"family": "point-mass", "target": 2})
    snap = sample_initial(spec, 1000, RngStreams(3))
    assert np.all(snap.y == 2)


def test_gaussian_initial_truncated_to_box():
    spec = model(initial={"family": "gaussian", "mean": [2.5], "std": [1.0]})
    snap = sample_initial(spec, 20_000, RngStreams(4))
    assert np.all(spec.inside(snap.x))


def test_no_jump_limit_is_pure_transport():
    spec = transport_2d()
    final, log = simulate_continuous(spec, sample_initial(spec, 50, RngStreams(5)), 1.0, 0.01)
    assert len(log) == 0
    np.testing.assert_allclose(final.x, [[1.0, 0.0]] * 50, atol=1e-13)
    np.testing.assert_allclose(final.tau, 1.0)


def test_zero_field_positions_fixed():
    spec = zero_field(m=3, rate=3.0)
    start = sample_initial(spec, 500, RngStreams(6))
    final, log = simulate_continuous(spec, start, 2.0, 0.05)
    assert len(log) > 0
    np.testing.assert_array_equal(final.x, start.x)


def test_mean_inter_jump_time():
    spec = zero_field(rate=2.0)
    n = 10**5
    # each particle contributes its first inter-jump gap
    final, log = simulate_continuous(spec, sample_initial(spec, n, RngStreams(7)), 10.0, 1.0)
    first = np.concatenate([[True], log.particle[1:] != log.particle[:-1]])
    gaps = log.time[first]
    gaps = gaps[gaps <= 10.0]
    assert abs(gaps.mean() - 0.5) < 4 * 0.5 / np.sqrt(len(gaps)) + 0.5 * np.exp(-20)


def test_jump_epochs_independent_of_kernel():
    a = zero_field(m=3, rate=1.5)
    b = zero_field(m=3, rate=1.5, kernel={"family": "point-mass", "target": 0})
    _, la = simulate_continuous(a, sample_initial(a, 300, RngStreams(8)), 3.0, 0.1)
    _, lb = simulate_continuous(b, sample_initial(b, 300, RngStreams(8)), 3.0, 0.1)
    np.testing.assert_array_equal(la.time, lb.time)
    np.testing.assert_array_equal(la.particle, lb.particle)


def test_targets_independent_of_rate():
    a = zero_field(m=4, rate=1.0)
    b = zero_field(m=4, rate=3.0)
    _, la = simulate_continuous(a, sample_initial(a, 300, RngStreams(9)), 4.0, 0.1)
    _, lb = simulate_continuous(b, sample_initial(b, 300, RngStreams(9)), 4.0, 0.1)
    for p in range(300):
        ta = la.to_y[la.particle == p]
        tb = lb.to_y[lb.particle == p]
        k = min(len(ta), len(tb))
        np.testing.assert_array_equal(ta[:k], tb[:k])


def test_jump_log_consistency(telegraph):
    final, log = simulate_continuous(telegraph, sample_initial(telegraph, 400, RngStreams(10)), 2.0, 0.01)
    for p in range(400):
        sel = log.particle == p
        assert np.all(np.diff(log.time[sel]) > 0)
        if sel.any():
            assert log.to_y[sel][-1] == final.y[p]
            assert final.t_last[p] == log.time[sel][-1]
            np.testing.assert_array_equal(log.from_y[sel][1:], log.to_y[sel][:-1])
    assert np.all((final.tau >= 0) & (final.tau <= 2.0))


def test_tau_resets_at_jump_and_positions_follow_flow(telegraph):
    start = sample_initial(telegraph, 200, RngStreams(11))
    final, log = simulate_continuous(telegraph, start, 1.5, 0.01)
    # constant speeds: displacement is c times (time in state 0 minus time in state 1)
    for p in range(200):
        sel = log.particle == p
        times = np.concatenate([[0.0], log.time[sel], [1.5]])
        states = np.concatenate([[start.y[p]], log.to_y[sel]])
        disp = np.sum(np.where(states == 0, 0.3, -0.3) * np.diff(times))
        assert abs(final.x[p, 0] - start.x[p, 0] - disp) < 1e-12


def test_sample_transition_examples():
    spec = zero_field(m=3, kernel={"family": "point-mass", "target": 2})
    assert all(sample_transition(spec, [0.0], RngStreams(0), 0, c) == 2 for c in range(20))


@pytest.mark.parametrize(
    "spec, probs",
    [
        (zero_field(m=4), [0.25] * 4),
        (model(kernel={"family": "softmax-score", "centers": [[-1.0], [1.0]], "beta": 2.0}), [0.5, 0.5]),
    ],
)
def test_transition_frequencies(spec, probs):
    # vectorized equivalent of 10^6 calls of sample_transition
    n = 10**6
    snap = sample_initial(spec.replace(initial={"family": "point", "point": [0.0]}), n, RngStreams(12))
    freq = np.bincount(snap.y, minlength=len(probs)) / n
    p = np.array(probs)
    assert np.all(np.abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n))


def test_discrete_jump_frequency():
    spec = zero_field(rate=1.0)
    n, steps = 100_000, 10
    snap = sample_initial(spec, n, RngStreams(13))
    jumps = 0
    for _ in range(steps):
        nxt = step_discrete(spec, snap, 0.1)
        jumps += int(np.sum(nxt.t_last == nxt.t))
        snap = nxt
    total = n * steps
    assert abs(jumps / total - 0.1) < 4 * np.sqrt(0.1 * 0.9 / total)


def test_discrete_rejects_large_rate_dt():
    spec = zero_field(rate=5.0)
    with pytest.raises(ValueError, match="Bernoulli"):
        step_discrete(spec, sample_initial(spec, 3, RngStreams(0)), 0.2)


def test_discrete_zero_field_and_step_size_free_transport():
    z = zero_field(rate=2.0)
    s = sample_initial(z, 100, RngStreams(14))
    np.testing.assert_array_equal(simulate_discrete(z, s, 0.05, 10).x, s.x)
    spec = transport_2d()
    s0 = sample_initial(spec, 5, RngStreams(15))
    one = step_discrete(spec, s0, 0.1)
    two = simulate_discrete(spec, s0, 0.05, 2)
    np.testing.assert_allclose(one.x, two.x, atol=1e-15)
    np.testing.assert_allclose(two.tau, 0.1)


def test_atom_weight_examples():
    spec = zero_field(rate=1.0)
    n = 10**6
    snap, _ = simulate_continuous(spec, sample_initial(spec, n, RngStreams(16)), 1.0, 1.0, record_jumps=False)
    p = np.exp(-1.0)
    assert abs(atom_weight(snap, 1.0) - p) < 4 * np.sqrt(p * (1 - p) / n)
    quiet = zero_field(rate=1e-12)
    snap, _ = simulate_continuous(quiet, sample_initial(quiet, 1000, RngStreams(17)), 1.0, 1.0)
    assert atom_weight(snap) == 1.0
    busy = zero_field(rate=20.0)
    snap, _ = simulate_continuous(busy, sample_initial(busy, 10**5, RngStreams(18)), 1.0, 1.0, record_jumps=False)
    assert atom_weight(snap) < 1e-6 + 4 * np.sqrt(np.exp(-20) / 10**5)


def test_atom_weight_needs_jump_at_zero():
    spec = zero_field(time_origin="stationary-approximation")
    snap = sample_initial(spec, 10, RngStreams(0))
    with pytest.raises(ValueError):
        atom_weight(snap)


def test_stationary_initial_tau_is_exponential():
    spec = zero_field(rate=2.0, time_origin="stationary-approximation")
    snap = sample_initial(spec, 50_000, RngStreams(19))
    assert stats.kstest(snap.tau, "expon", args=(0, 0.5)).pvalue > 0.01


def test_tau_distribution_truncated_exponential():
    spec = zero_field(rate=1.0)
    n, t = 100_000, 1.5
    snap, _ = simulate_continuous(spec, sample_initial(spec, n, RngStreams(20)), t, 1.0, record_jumps=False)
    tau = snap.tau[snap.t_last != snap.t_start]
    cdf = lambda s: (1 - np.exp(-np.asarray(s))) / (1 - np.exp(-t))
    assert stats.kstest(tau, cdf).pvalue > 0.01


def test_subset_evolves_like_full_run(telegraph):
    full = sample_initial(telegraph, 300, RngStreams(21))
    part = full.take(slice(100, 200))
    a, _ = simulate_continuous(telegraph, full, 1.0, 0.01)
    b, _ = simulate_continuous(telegraph, part, 1.0, 0.01)
    np.testing.assert_array_equal(a.x[100:200], b.x)
    np.testing.assert_array_equal(a.y[100:200], b.y)


@settings(max_examples=5)
@given(st.integers(1, 4), st.integers(0, 2**32))
def test_ensemble_independent_of_chunking_and_workers(workers, seed):
    spec = model(rate=2.0)
    ref = simulate_ensemble(spec, 700, seed, 1.0, 0.02, workers=1, chunk_size=700)
    res = simulate_ensemble(spec, 700, seed, 1.0, 0.02, workers=workers, chunk_size=128)
    np.testing.assert_array_equal(ref.final.x, res.final.x)
    np.testing.assert_array_equal(ref.final.t_last, res.final.t_last)
    np.testing.assert_array_equal(ref.jumps.time, res.jumps.time)


def test_record_times_do_not_change_the_path(telegraph):
    start = sample_initial(telegraph, 200, RngStreams(22))
    a, _ = simulate_continuous(telegraph, start, 1.0, 0.01)
    seen = []
    b, _ = simulate_continuous(telegraph, start, 1.0, 0.01, record_times=[0.0, 0.5, 1.0], recorder=lambda s: seen.append(s.t))
    np.testing.assert_allclose(a.x, b.x, atol=1e-14)
    assert seen == [0.0, 0.5, 1.0]


def test_csv_formats(tmp_path, telegraph):
    final, log = simulate_continuous(telegraph, sample_initial(telegraph, 20, RngStreams(23)), 1.0, 0.01)
    write_snapshot_csv(final, tmp_path / "s.csv")
    write_jump_log_csv(log, tmp_path / "j.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "particle,t,x0,y,tau"
    row = lines[1].split(",")
    assert float(row[2]) == final.x[0, 0]  # 17 digits round-trip exactly
    jl = (tmp_path / "j.csv").read_text().splitlines()
    assert jl[0] == "particle,time,from_y,to_y,x0"
    keys = [(int(r.split(",")[0]), float(r.split(",")[1])) for r in jl[1:]]
    assert keys == sorted(keys)


def test_bad_arguments():
    spec = zero_field()
    with pytest.raises(ValueError):
        sample_initial(spec, 0, RngStreams(0))
    with pytest.raises(ValueError):
        simulate_continuous(spec, sample_initial(spec, 2, RngStreams(0)), 0.0, 0.1)
    other = zero_field(rate=2.0)
    with pytest.raises(ValueError, match="different model"):
        simulate_continuous(other, sample_initial(spec, 2, RngStreams(0)), 1.0, 0.1)
    assert isinstance(JumpLog.empty(1), JumpLog) and isinstance(sample_initial(spec, 1, RngStreams(0)), EnsembleSnapshot)
