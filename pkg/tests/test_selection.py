import numpy as np
import pytest

from outdoor_rti.channel_model import GLOBAL, NODE_SPECIFIC, LinkChannelStats
from outdoor_rti.scene import LinkKey, enumerate_links, forest_deployment
from outdoor_rti.selection import (Strategy, energy_coefficient, pair_weight, relative_fade_levels, select)


def make_stats(mean, var, fade=None, mode=NODE_SPECIFIC, channels=(11, 16, 21, 26)):
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    L, C = mean.shape
    links = [LinkKey(1, i + 2) for i in range(L)]
    var = np.broadcast_to(np.asarray(var, dtype=float), (L, C)).copy()
    count = np.where(np.isnan(mean), 0, 20)
    s = LinkChannelStats(links, list(channels)[:C], mean, var, count)
    if fade is not None:
        s = s.with_fade(np.atleast_2d(np.asarray(fade, dtype=float)), mode)
    return s


def random_stats(rng, L=40, C=4, mode=NODE_SPECIFIC):
    mean = rng.uniform(-100, -40, size=(L, C))
    var = rng.uniform(0.0, 6.0, size=(L, C))
    fade = rng.uniform(-10, 8, size=(L, C))
    return make_stats(mean, var, fade, mode, channels=(11, 16, 21, 26)[:C])


class TestPairWeight:
    def test_examples(self):
        assert pair_weight(2.0, 0.5, True) == pytest.approx(4.0)
        assert pair_weight(2.0, 0.5, False) == 0.0
        assert pair_weight(2.0, 0.0, True) == pytest.approx(200.0)  # variance floored at 0.01


class TestMembership:
    def test_connectivity_threshold(self):
        s = make_stats([[-85.0, -93.0, -70.0, -70.0]], 1.0, [[1.0, 1.0, -1.0, 0.0]])
        sel = select(s, "OUTw")
        assert sel.sets["Lr"][0].tolist() == [True, False, True, True]
        assert sel.sets["Lp"][0].tolist() == [True, True, False, False]
        assert sel.sets["Ls"][0].tolist() == [True, False, False, False]

    def test_upsilon_bound(self):
        s = make_stats([[-70.0] * 4], 1.0, [[1.0] * 4])
        with pytest.raises(ValueError):
            select(s, "OUT+", upsilon_r=-79.0)

    def test_missing_fade_levels(self):
        with pytest.raises(ValueError):
            select(make_stats([[-70.0] * 4], 1.0), "OUT+")

    def test_wrong_model_mode(self):
        s = make_stats([[-70.0] * 4], 1.0, [[1.0] * 4], mode=GLOBAL)
        with pytest.raises(ValueError):
            select(s, "OUT+")
        assert select(s, "COM+").size == 1

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            Strategy.parse("XYZ")
        assert Strategy.parse("out+") is Strategy.OUT_PLUS
        assert Strategy.parse("FLB_{U}") is Strategy.FLB_U
        assert Strategy.parse(Strategy.RFL_P) is Strategy.RFL_P


class TestArgmax:
    def test_tie_goes_to_lowest_channel(self):
        # rho = F / var with var = 1: {11: 1, 16: 3, 21: 3, 26: 0.5}
        s = make_stats([[-70.0] * 4], 1.0, [[1.0, 3.0, 3.0, 0.5]])
        sel = select(s, "OUT+")
        assert list(sel.pairs()) == [(LinkKey(1, 2), 16, 3.0)]

    def test_empty_link_dropped(self):
        s = make_stats([[-70.0] * 4, [-70.0] * 4], 1.0, [[1.0, 2.0, 0.5, 0.1], [-1.0] * 4])
        sel = select(s, "OUT+")
        assert sel.mask.sum(axis=1).tolist() == [1, 0]

    def test_selected_subset_of_ls(self, rng):
        for strat in Strategy:
            mode = strat.model_mode or NODE_SPECIFIC
            sel = select(random_stats(rng, mode=mode), strat)
            assert not np.any(sel.mask & ~sel.sets["Ls"])
            assert np.array_equal(sel.sets["Ls"], sel.sets["Lp"] & sel.sets["Lr"])

    def test_out_plus_within_outw(self, rng):
        s = random_stats(rng)
        plus, w = select(s, "OUT+"), select(s, "OUTw")
        assert not np.any(plus.mask & ~w.sets["Ls"])
        assert np.all(plus.mask.sum(axis=1) <= 1)
        assert np.array_equal(plus.mask.any(axis=1), w.mask.any(axis=1))

    def test_monotone_in_threshold(self, rng):
        s = random_stats(rng)
        sizes = [select(s, "OUT+", upsilon_r=u).size for u in (-100.0, -95.0, -90.0, -85.0, -80.0)]
        assert sizes == sorted(sizes, reverse=True)


class TestRelativeFade:
    def test_examples(self):
        s = make_stats([[-70.0, -75.0, -72.0, -80.0]], 1.0)
        assert relative_fade_levels(s)[0].tolist() == [10.0, 5.0, 8.0, 0.0]

    def test_missing_channel_ignored(self):
        s = make_stats([[-70.0, np.nan, -72.0, -71.0]], 1.0)
        f = relative_fade_levels(s)[0]
        assert np.isnan(f[1]) and f[0] == 2.0 and f[2] == 0.0

    def test_rfl_plus_picks_strongest(self):
        s = make_stats([[-70.0, -65.0, -72.0, -80.0]], 1.0)
        assert [c for _, c, _ in select(s, "RFL+").pairs()] == [16]


class TestEnergyCoefficient:
    def test_examples(self):
        assert energy_coefficient(0, 20, 4) == 1.0
        assert energy_coefficient(1520, 20, 4) == 0.0
        assert energy_coefficient(0.128 * 1520, 20, 4) == pytest.approx(0.872, abs=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            energy_coefficient(1521, 20, 4)
        with pytest.raises(ValueError):
            energy_coefficient(-1, 20, 4)

    def test_flb_u_uses_everything(self):
        dep = forest_deployment()
        links = enumerate_links(dep)
        L, C = len(links), 4
        s = LinkChannelStats(links, dep.channels, np.full((L, C), -70.0), np.ones((L, C)), np.full((L, C), 10))
        sel = select(s, "FLB_U")
        assert sel.size == 1520
        assert np.all(sel.weights[sel.mask] == 1.0)
        assert energy_coefficient(sel, 20, 4) == 0.0


def test_selection_csv(tmp_path):
    s = make_stats([[-70.0, -95.0, -72.0, -80.0]], 2.0, [[1.0, 4.0, 2.0, -1.0]])
    sel = select(s, "OUT+")
    sel.to_csv(tmp_path / "sel.csv")
    rows = (tmp_path / "sel.csv").read_text().splitlines()
    assert rows[0] == "tx,rx,channel,weight,set"
    final = [r for r in rows[1:] if r.endswith(",L")]
    assert final == ["1,2,21,1.0,L"]
