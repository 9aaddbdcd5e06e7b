import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physprior.errors import DataCorruption, InvalidArgument
from physprior.fields import (Field, Grid2D, ObservationMask, SeededRng, derive_rng,
                              derive_seed, field_stats, make_mask, observed_count)


def test_grid_spacing_node_and_periodic():
    g = Grid2D(64, 64)
    assert g.hx == pytest.approx(1 / 63)
    assert g.x()[-1] == pytest.approx(1.0)
    p = Grid2D(32, 32, 0, 1, 0, 1, "periodic")
    assert p.hx == pytest.approx(1 / 32)
    assert p.x()[-1] == pytest.approx(31 / 32)


@pytest.mark.parametrize("kw", [dict(nx=3, ny=8), dict(nx=8, ny=8, x1=0.0),
                                dict(nx=8, ny=8, bc="robin")])
def test_grid_rejects_bad_arguments(kw):
    with pytest.raises(InvalidArgument):
        Grid2D(**kw)


def test_coarsen_refine_round_trip():
    g = Grid2D(65, 65, -1, 1, -1, 1, "dirichlet")
    assert g.refine(2).coarsen(2) == g
    assert g.refine(2).nx == 129
    p = Grid2D(32, 32, bc="periodic")
    assert p.refine(2).coarsen(2) == p
    with pytest.raises(InvalidArgument):
        Grid2D(64, 64).coarsen(2)


def test_mesh_row_index_is_y():
    g = Grid2D(5, 4, 0, 1, 0, 3)
    X, Y = g.mesh()
    assert X.shape == (4, 5)
    np.testing.assert_allclose(Y[:, 0], [0, 1, 2, 3])


def test_field_is_immutable_copy():
    g = Grid2D(4, 4)
    a = np.ones((4, 4))
    f = Field(g, a)
    a[0, 0] = 5
    assert f.data[0, 0, 0] == 1
    with pytest.raises(ValueError):
        f.data[0, 0, 0] = 2
    with pytest.raises(InvalidArgument):
        Field(g, np.ones((5, 4)))


def test_field_stats_values_and_corruption():
    g = Grid2D(4, 4)
    data = np.arange(16.0).reshape(4, 4)
    lo, hi, l2 = field_stats(Field(g, data))
    assert (lo, hi) == (0.0, 15.0)
    assert l2 == pytest.approx(math.sqrt(sum(i * i for i in range(16))))
    data[1, 2] = np.nan
    with pytest.raises(DataCorruption, match="index 6"):
        field_stats(Field(g, data))


def test_derived_streams_reproducible_and_distinct():
    a = derive_rng(7, 1, 2).standard_normal(5)
    np.testing.assert_array_equal(a, derive_rng(7, 1, 2).standard_normal(5))
    assert not np.allclose(a, derive_rng(7, 2, 1).standard_normal(5))
    assert derive_seed(7, 3) != derive_seed(8, 3)
    r = SeededRng(7)
    assert r.child_seed(1, 2) == derive_seed(7, 1, 2)
    np.testing.assert_array_equal(r.stream(4).random(3), derive_rng(7, 4).random(3))


@pytest.mark.parametrize("fraction,n,expected", [(0.3, 1024, 307), (0.5, 5, 3),
                                                 (0.05, 10, 1), (1.0, 17, 17), (0.0, 9, 0)])
def test_observed_count_rounds_half_up(fraction, n, expected):
    assert observed_count(fraction, n) == expected


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(4, 12), st.integers(0, 2**31))
def test_mask_counts_match_rounding(fraction, n, seed):
    g = Grid2D(n, n)
    m = make_mask(g, 3, fraction, seed)
    assert m.counts() == [observed_count(fraction, n * n)] * 3
    assert m == make_mask(g, 3, fraction, seed)


def test_mask_channels_are_independent():
    m = make_mask(Grid2D(32, 32), 3, 0.3, 9)
    assert not np.array_equal(m.masks[0], m.masks[1])


def test_mask_rejects_fraction_outside_unit_interval():
    with pytest.raises(InvalidArgument):
        make_mask(Grid2D(8, 8), 1, 1.5, 0)


def test_observation_mask_default_fractions():
    g = Grid2D(4, 4)
    masks = np.zeros((1, 4, 4), bool)
    masks[0, :2] = True
    assert ObservationMask(g, masks).fractions == (0.5,)
