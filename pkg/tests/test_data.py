import numpy as np
import pytest

from vlshift.model import DomainError
from vlshift import data as D
from vlshift.likelihood import IndividualSeries

ETA = 2.658


def _raw(values, ident="x", start_day=0.0):
    days = np.arange(start_day, start_day + len(values))
    return D.RawSeries(id=ident, days=days, values=np.asarray(values, dtype=float),
                       eta=ETA)


def test_rule2_bracketing_lod_trim():
    # [eta, eta, 5, 6, eta] -> [eta, 5, 6, eta]
    out = D.preprocess(_raw([ETA, ETA, 5, 6, ETA]))
    assert isinstance(out, IndividualSeries)
    assert np.allclose(out.values, [ETA, 5, 6, ETA])
    assert list(out.censored) == [True, False, False, True]
    assert np.allclose(out.times, [1, 2, 3, 4])


def test_rule3_interior_lod_run_truncates():
    # [eta, 5, 6, eta, eta, eta, 4] -> [eta, 5, 6, eta]
    out = D.preprocess(_raw([ETA, 5, 6, ETA, ETA, ETA, 4]))
    assert isinstance(out, IndividualSeries)
    assert np.allclose(out.values, [ETA, 5, 6, ETA])


def test_rule4_too_few_detections_excluded():
    out = D.preprocess(_raw([ETA, 5, ETA, ETA, ETA, ETA]))
    assert isinstance(out, D.Excluded)
    assert "fewer than 2" in out.reason


def test_rule1_detection_outside_window_excluded():
    days = np.array([-20.0, 0.0, 1.0])
    values = np.array([5.0, 8.0, 7.0])  # detection 20 days before the peak obs
    out = D.preprocess(D.RawSeries(id="w", days=days, values=values, eta=ETA))
    assert isinstance(out, D.Excluded)
    assert "14-day window" in out.reason


def test_preprocess_idempotent_randomized():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = rng.integers(4, 25)
        vals = np.where(rng.random(n) < 0.4, ETA,
                        ETA + rng.uniform(0.1, 6.0, size=n))
        out = D.preprocess(_raw(vals))
        if isinstance(out, D.Excluded):
            continue
        again = D.preprocess(D.RawSeries(id=out.id, days=out.times,
                                         values=out.values, eta=ETA))
        assert isinstance(again, IndividualSeries)
        assert np.array_equal(again.times, out.times)
        assert np.array_equal(again.values, out.values)
        assert np.array_equal(again.censored, out.censored)


def test_preprocess_never_fabricates_or_reorders():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = rng.integers(4, 25)
        vals = np.where(rng.random(n) < 0.4, ETA,
                        ETA + rng.uniform(0.1, 6.0, size=n))
        raw = _raw(vals)
        out = D.preprocess(raw)
        if isinstance(out, D.Excluded):
            continue
        assert np.all(np.diff(out.times) > 0)
        assert np.all(np.isin(out.times, raw.days))
        # censored entries equal eta exactly
        assert np.all(out.values[out.censored] == ETA)


@pytest.fixture(scope="module")
def small_cohort():
    cfg = D.CohortConfig(n=3, seed=11)
    return D.generate_cohort(cfg)


def test_cohort_reproducible(small_cohort):
    cfg = D.CohortConfig(n=3, seed=11)
    again = D.generate_cohort(cfg)
    for a, b in zip(small_cohort.series, again.series):
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.values, b.values)
    for a, b in zip(small_cohort.truth, again.truth):
        assert (a.R0, a.delta, a.rho, a.t0, a.tau) == (b.R0, b.delta, b.rho, b.t0, b.tau)


def test_cohort_respects_rejection_bounds(small_cohort):
    from vlshift.model import ModelParams
    from vlshift.ode import peak_stats, solve
    from vlshift.timeshift import ShiftedTrajectory, shift_eval

    cfg = small_cohort.config
    for g in small_cohort.truth:
        p = ModelParams(R0=g.R0, k=cfg.k, delta=g.delta, rho=g.rho,
                        c=cfg.c, t0=g.t0, S0=cfg.s0)
        traj = solve(p, t_end=g.t0 + 40.0)
        stats = peak_stats(traj)
        assert 5.0 <= stats.log10_v_peak <= 10.0
        peak_day = (stats.t_peak - g.t0) - g.tau
        assert 4.0 <= peak_day <= 9.0
        z21 = shift_eval(ShiftedTrajectory(traj=traj, tau=g.tau), g.t0 + 21.0)
        assert z21 < 4.5


def test_cohort_emitted_values(small_cohort):
    for s in small_cohort.series:
        assert s.n_detected >= 2
        assert np.all(s.values[s.censored] == s.eta)
        assert np.all(s.values[~s.censored] > s.eta)


def test_dataset_roundtrip(tmp_path, small_cohort):
    data_p = tmp_path / "d.csv"
    meta_p = tmp_path / "d.meta.json"
    truth_p = tmp_path / "t.csv"
    D.save_dataset(small_cohort, data_p, meta_p, truth_p, provenance="prov line")
    series = D.load_dataset(data_p, meta_p)
    assert len(series) == 3
    for a, b in zip(series, small_cohort.series):
        assert a.id == b.id
        assert np.allclose(a.times, b.times)
        assert np.allclose(a.values, b.values)
        assert np.array_equal(a.censored, b.censored)
    truth = D.load_truth(truth_p)
    for a, b in zip(truth, small_cohort.truth):
        assert a.R0 == pytest.approx(b.R0, rel=1e-10)
        assert a.tau == pytest.approx(b.tau, rel=1e-10)


def test_load_dataset_duplicate_day_names_id_and_day(tmp_path):
    d = tmp_path / "x.csv"
    d.write_text("id,day,log10_vl\nA,1,5.0\nA,1,6.0\nA,2,5.5\n")
    m = tmp_path / "x.meta.json"
    m.write_text('{"eta": 2.658}')
    with pytest.raises(D.ParseError, match="id A.*day 1"):
        D.load_dataset(d, m)


def test_load_dataset_value_below_eta_rejected(tmp_path):
    d = tmp_path / "x.csv"
    d.write_text("id,day,log10_vl\nA,1,1.0\nA,2,5.5\n")
    m = tmp_path / "x.meta.json"
    m.write_text('{"eta": 2.658}')
    with pytest.raises(D.ParseError, match="below the detection limit"):
        D.load_dataset(d, m)


def test_load_dataset_bad_header(tmp_path):
    d = tmp_path / "x.csv"
    d.write_text("subject,t,vl\nA,1,5.0\n")
    m = tmp_path / "x.meta.json"
    m.write_text('{"eta": 2.658}')
    with pytest.raises(D.ParseError, match="header"):
        D.load_dataset(d, m)


def test_generate_rejection_limit():
    # impossible bounds exhaust the rejection budget quickly
    cfg = D.CohortConfig(n=1, seed=1, peak_logvl_range=(14.0, 15.0),
                         max_rejections=25)
    with pytest.raises(DomainError, match="rejections"):
        D.generate_cohort(cfg)
