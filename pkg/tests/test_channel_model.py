import numpy as np
import pytest

from outdoor_rti.channel_model import (GLOBAL, NODE_SPECIFIC, CalibrationWindow, LinkChannelStats,
                                       PathLossModel, UnderdeterminedFitError, estimate_stats, fade_levels,
                                       fit_path_loss, load_model, save_model)
from outdoor_rti.scene import Area, Deployment, LinkGeometry, NodeRecord, enumerate_links
from outdoor_rti.simulate import RssTrace, ScenarioConfig, WindProfile, generate_trace

from conftest import square_deployment


def trace_from_values(dep, values):
    """RssTrace whose every pair carries the same frame sequence ``values``."""
    links = enumerate_links(dep)
    v = np.asarray(values, dtype=float)
    rss = np.broadcast_to(v[:, None, None], (len(v), len(links), len(dep.channels))).copy()
    return RssTrace(links, list(dep.channels), np.arange(len(v)) * 0.34, rss)


def stats_from_means(dep, means):
    L, C = means.shape
    return LinkChannelStats(enumerate_links(dep), list(dep.channels), means.astype(float),
                            np.ones((L, C)), np.full((L, C), 10))


class TestEstimateStats:
    def test_constant_samples(self, square):
        s = estimate_stats(trace_from_values(square, [-65.0] * 10), CalibrationWindow(0, 10))
        assert np.all(s.mean == -65.0)
        assert np.all(s.var == 0.0)
        assert np.all(s.count == 10)

    def test_two_samples(self, square):
        s = estimate_stats(trace_from_values(square, [-70.0, -72.0]), CalibrationWindow(0, 2))
        assert np.allclose(s.mean, -71.0)
        assert np.allclose(s.var, 2.0)  # unbiased

    def test_missing_samples_counted(self, square):
        tr = trace_from_values(square, [-70.0, -72.0, -74.0])
        tr.rss[1, 0, 0] = np.nan
        tr.rss[:, 1, 1] = np.nan
        s = estimate_stats(tr, CalibrationWindow(0, 3))
        assert s.count[0, 0] == 2 and s.mean[0, 0] == pytest.approx(-72.0)
        assert s.count[1, 1] == 0 and np.isnan(s.mean[1, 1]) and not s.present[1, 1]

    def test_window_bounds(self):
        with pytest.raises(ValueError):
            CalibrationWindow(5, 5)

    def test_noise_free_simulation_recovers_planted_model(self, square):
        sc = ScenarioConfig(square, duration=3.4, offset_range=(0.0, 0.0), wind=WindProfile.constant(0.0),
                            drop_missing=False)
        gen = generate_trace(sc)
        s = estimate_stats(gen.trace, CalibrationWindow(0, gen.trace.n_frames))
        geom = LinkGeometry(square)
        expected = gen.model.predict_links(geom)
        assert np.allclose(s.mean, expected[:, None], atol=1e-9)
        assert np.allclose(s.var, 0.0, atol=1e-18)


class TestFit:
    def star(self):
        # transmitter 1 at the origin, receivers at 5, 10 and 20 m
        nodes = [NodeRecord(1, 0, 0), NodeRecord(2, 5, 0), NodeRecord(3, 10, 0), NodeRecord(4, 20, 0)]
        return Deployment(nodes, [11, 26], Area(-1, -1, 21, 1))

    def test_exact_fit(self):
        dep = self.star()
        geom = LinkGeometry(dep)
        truth = PathLossModel(NODE_SPECIFIC, {n: (3.0, -40.0, 1.0) for n in dep.node_ids})
        means = np.repeat(truth.predict_links(geom)[:, None], 2, axis=1)
        m = fit_path_loss(stats_from_means(dep, means), dep)
        eta, p0, d0 = m.entry(1)
        assert eta == pytest.approx(3.0, abs=1e-9)
        assert p0 == pytest.approx(-40.0, abs=1e-9)
        assert d0 == 1.0

    def test_two_transmitters_and_global(self):
        dep = self.star()
        geom = LinkGeometry(dep)
        etas = {1: 2.5, 2: 3.5, 3: 2.5, 4: 3.5}
        truth = PathLossModel(NODE_SPECIFIC, {n: (etas[n], -40.0, 1.0) for n in dep.node_ids})
        means = np.repeat(truth.predict_links(geom)[:, None], 2, axis=1)
        stats = stats_from_means(dep, means)
        ns = fit_path_loss(stats, dep)
        for n in dep.node_ids:
            assert ns.entry(n)[0] == pytest.approx(etas[n], abs=1e-9)
        g = fit_path_loss(stats, dep, mode=GLOBAL)
        assert 2.5 < g.entry(3)[0] < 3.5
        assert g.entry(1) == g.entry(4)

    def test_underdetermined_names_transmitters(self, square):
        means = np.full((12, 2), -60.0)
        stats = stats_from_means(square, means)
        links = enumerate_links(square)
        for i, l in enumerate(links):
            if l.tx == 2 and l.rx != 1:
                stats.count[i] = 0
                stats.mean[i] = np.nan
        with pytest.raises(UnderdeterminedFitError) as info:
            fit_path_loss(stats, square)
        assert info.value.nodes == [2]

    def test_bad_mode(self, square):
        with pytest.raises(ValueError):
            fit_path_loss(stats_from_means(square, np.full((12, 2), -60.0)), square, mode="other")

    def test_model_json_roundtrip(self, tmp_path):
        m = PathLossModel(NODE_SPECIFIC, {1: (2.5, -41.25, 1.0), 7: (3.0, -38.0, 1.0)})
        save_model(m, tmp_path / "m.json")
        assert load_model(tmp_path / "m.json") == m
        g = PathLossModel(GLOBAL, {None: (2.7, -40.0, 1.0)})
        save_model(g, tmp_path / "g.json")
        assert load_model(tmp_path / "g.json") == g


class TestFadeLevels:
    def test_examples(self, square):
        geom = LinkGeometry(square)
        model = PathLossModel(GLOBAL, {None: (2.0, -40.0, 1.0)})
        pred = model.predict_links(geom)
        means = np.column_stack([pred + 2.1, pred - 10.0])
        s = fade_levels(stats_from_means(square, means), model, square)
        assert np.allclose(s.fade[:, 0], 2.1)
        assert np.allclose(s.fade[:, 1], -10.0)
        assert s.model_mode == GLOBAL

    def test_ten_metre_link(self):
        # a -62 dBm mean against a -64.1 dBm prediction is a +2.1 dB fade
        nodes = [NodeRecord(1, 0, 0), NodeRecord(2, 10, 0), NodeRecord(3, 0, 10)]
        dep = Deployment(nodes, [11], Area(0, 0, 10, 10))
        eta = 2.41
        model = PathLossModel(GLOBAL, {None: (eta, -64.1 + 10 * eta * 1.0, 1.0)})
        means = np.full((6, 1), -62.0)
        s = fade_levels(stats_from_means(dep, means), model, dep)
        assert s.fade[0, 0] == pytest.approx(2.1)  # link (1, 2) is 10 m long

    def test_offset_invariance(self, square, rng):
        model = PathLossModel(NODE_SPECIFIC, {n: (rng.uniform(2, 3), rng.uniform(-45, -35), 1.0)
                                              for n in square.node_ids})
        means = rng.uniform(-80, -50, size=(12, 2))
        a = fade_levels(stats_from_means(square, means), model, square).fade
        b = fade_levels(stats_from_means(square, means + 7.5), model, square).fade
        assert np.allclose(b - a, 7.5)


def test_stats_csv_roundtrip(tmp_path, square, rng):
    means = rng.uniform(-80, -50, size=(12, 2))
    stats = stats_from_means(square, means)
    stats.var = rng.uniform(0, 4, size=(12, 2))
    stats.count[3, 1] = 0
    stats.mean[3, 1] = np.nan
    stats.var[3, 1] = np.nan
    stats = stats.with_fade(rng.normal(size=(12, 2)), GLOBAL)
    stats.to_csv(tmp_path / "s.csv")
    back = LinkChannelStats.from_csv(tmp_path / "s.csv", square)
    assert np.array_equal(back.count, stats.count)
    ok = stats.present
    assert np.array_equal(back.mean[ok], stats.mean[ok])
    assert np.array_equal(back.var[ok], stats.var[ok])
    assert np.array_equal(back.fade[ok], stats.fade[ok])
