"""Memory model: published operating point, exact rational identities."""

import io
from fractions import Fraction

import numpy as np
import pytest

from rgdepth import memcost


TABLE_POINT = dict(C=128, H=128, W=608, R=3)


class TestCost:
    def test_reference_point_gb(self):
        r = memcost.cost(**TABLE_POINT)
        assert abs(r.gb_dc - 42.75) < 0.005
        assert abs(r.gb_cf - 0.334) < 0.0005
        assert abs(r.gb_eg - 0.037) < 0.0005

    def test_reference_point_ratios(self):
        r = memcost.cost(**TABLE_POINT)
        assert 8.9 <= r.bytes_cf / r.bytes_eg <= 9.1
        assert 1150 <= r.bytes_dc / r.bytes_eg <= 1156

    def test_degenerate_c1_r1(self):
        r = memcost.cost(C=1, H=4, W=4, R=1)
        spread = r.elem_bytes * 1 * 1
        assert abs(r.bytes_dc - r.bytes_eg) <= spread
        assert abs(r.bytes_cf - r.bytes_eg) <= spread
        # the reduction ratio degenerates: eg/dc * C * R^2 >= 1 at C=R=1
        assert r.ratio_eg_dc * 1 * 1 >= 1

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            memcost.cost(0, 1, 1, 1)
        with pytest.raises(ValueError):
            memcost.cost(1, 1, 1, -3)

    @pytest.mark.parametrize("seed", range(8))
    def test_ratio_identities_exact(self, seed):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(1, 257))
        h = int(rng.integers(1, 1025))
        w = int(rng.integers(1, 1025))
        r = int(rng.integers(1, 8))
        rep = memcost.cost(c, h, w, r)
        assert rep.ratio_eg_dc == Fraction(1, c * r * r) + Fraction(1, h * w * r * r)
        assert rep.ratio_eg_cf == Fraction(h * w + c, h * w * r * r + c)

    def test_ordering_at_realistic_sizes(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            c = int(rng.integers(2, 257))
            h = int(rng.integers(8, 513))
            w = int(rng.integers(8, 513))
            r = int(rng.integers(2, 8))
            rep = memcost.cost(c, h, w, r)
            assert rep.bytes_eg <= rep.bytes_cf <= rep.bytes_dc


class TestSweep:
    def test_single_point_equals_cost(self):
        (row,) = memcost.sweep([(4, 8, 8, 3)])
        assert row == memcost.cost(4, 8, 8, 3)

    def test_monotone_in_each_argument(self):
        grid = [(c, 64, 64, r) for c in (64, 128) for r in (3, 5)]
        rows = memcost.sweep(grid)
        assert len(rows) == 4
        by_key = {(r.C, r.R): r for r in rows}
        assert by_key[(64, 3)].bytes_dc < by_key[(128, 3)].bytes_dc
        assert by_key[(64, 3)].bytes_dc < by_key[(64, 5)].bytes_dc
        assert by_key[(128, 3)].bytes_eg == by_key[(128, 5)].bytes_eg  # EG has no R term

    def test_monotone_nondecreasing_random(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            c, h, w, r = (int(rng.integers(1, 65)) for _ in range(4))
            base = memcost.cost(c, h, w, r)
            bumped = memcost.cost(c + 1, h + 1, w + 1, r + 1)
            assert bumped.bytes_dc >= base.bytes_dc
            assert bumped.bytes_cf >= base.bytes_cf
            assert bumped.bytes_eg >= base.bytes_eg

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            memcost.sweep([])

    def test_csv_format(self):
        buf = io.StringIO()
        memcost.write_csv(memcost.sweep([tuple(TABLE_POINT.values())]), buf)
        header, row = buf.getvalue().strip().split("\n")
        assert header == memcost.CSV_HEADER
        cells = row.split(",")
        assert cells[:5] == ["128", "128", "608", "3", "4"]
        assert int(cells[5]) == 45902462976
