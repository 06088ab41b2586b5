import numpy as np
import pytest

from mecsim.radio import (ChannelModel, McsTable, best_mcs_at, bler, bler_all, capacity,
                          effective_snr, select_mcs)


def table_with_bler(bits, targets, snr=0.0, slope=1.0):
    """A table whose BLER at `snr` equals `targets` (logistic inverted)."""
    mids = [snr - np.log(1.0 / e - 1.0) / slope for e in targets]
    return McsTable(tuple(bits), tuple(mids), (slope,) * len(bits))


def test_bler_shape():
    t = McsTable.default()
    for m in (1, 7, 15):
        assert bler(t.midpoint_db[m - 1], m, t) == pytest.approx(0.5)
        assert bler(1e4, m, t) == pytest.approx(0.0, abs=1e-12)
        assert bler(-1e4, m, t) == pytest.approx(1.0, abs=1e-12)


def test_bler_monotone():
    t = McsTable.default()
    snr = np.linspace(-20, 40, 301)
    e = bler_all(snr, t)
    assert np.all(np.diff(e, axis=0) <= 1e-15)  # nonincreasing in SNR
    assert np.all(np.diff(e, axis=1) >= -1e-15)  # nondecreasing in m


def test_effective_snr():
    assert effective_snr([10]) == 10
    assert effective_snr([0, 20]) == 10
    assert effective_snr([7, 7, 7]) == 7
    with pytest.raises(ValueError):
        effective_snr([])


def test_select_mcs_example():
    # midpoints must increase with m, so E_1=0.1 < E_2=0.6 is representable
    t = table_with_bler([1000, 2000], [0.1, 0.6])
    m, gp = select_mcs([0.0], t)
    assert m == 1 and gp == pytest.approx(900.0)


def test_select_mcs_all_zero_bler():
    t = McsTable((100.0, 200.0, 300.0), (-100.0, -99.0, -98.0), (5.0, 5.0, 5.0))
    m, gp = select_mcs([20.0, 20.0], t)
    assert m == 3 and gp == pytest.approx(600.0)


def test_select_mcs_single_entry():
    t = McsTable((500.0,), (3.0,), (1.0,))
    assert select_mcs([3.0], t) == (1, pytest.approx(250.0))


def test_select_mcs_exhaustive_random():
    rng = np.random.default_rng(0)
    for _ in range(500):
        M = int(rng.integers(1, 16))
        bits = np.cumsum(rng.uniform(10, 500, M))
        mids = np.cumsum(rng.uniform(0.1, 4, M)) - 10
        t = McsTable(tuple(bits), tuple(mids), tuple(rng.uniform(0.3, 3, M)))
        snr = rng.uniform(-15, 35, int(rng.integers(1, 6)))
        m, gp = select_mcs(snr, t)
        e = effective_snr(snr)
        per = [(1 - bler(e, j, t)) * t.r(j) for j in range(1, M + 1)]
        assert per[m - 1] == max(per)
        assert gp == pytest.approx(len(snr) * max(per))


def test_best_mcs_tie_prefers_smaller():
    # identical goodput for both entries at snr 0: 0.5*1000 == 0.25*2000
    t = table_with_bler([1000, 2000], [0.5, 0.75])
    assert best_mcs_at(0.0, t)[0] == 1


def test_capacity():
    t = McsTable((1000.0, 2000.0), (0.0, 1.0), (1.0, 1.0))
    assert capacity(4, 1, t) == 4000
    assert capacity(0, 2, t) == 0
    assert capacity(1, 1, t) == t.r(1)


def test_table_validation():
    with pytest.raises(ValueError):
        McsTable((2.0, 1.0), (0.0, 1.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        McsTable((1.0, 2.0), (1.0, 0.0), (1.0, 1.0))


def test_table_round_trip(tmp_path):
    t = McsTable.default()
    p = tmp_path / "mcs.csv"
    t.save(p)
    assert McsTable.load(p) == t


def test_channel_deterministic():
    ch = ChannelModel(n_rbs=10)
    mean = ch.mean_snr_db(np.array([50.0, 300.0]), np.array([0.0, 0.0]))
    assert mean[0] > mean[1]
    a = ch.realize(1, 5, mean)
    b = ch.realize(1, 5, mean)
    assert a.shape == (2, 10) and np.array_equal(a, b)
    assert not np.array_equal(a, ch.realize(1, 6, mean))
