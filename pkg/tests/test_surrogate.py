import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metadr.dataset import DesignRanges, sample_design
from metadr.materials import MaterialDb, drude_eps
from metadr.surrogate import (
    WAVELENGTHS_NM,
    DesignVector,
    InvalidDesign,
    LayerStack,
    build_stack,
    ribbon_layer_eps,
    stack_reflectance,
    stack_transmittance,
    supercell_reflectance,
)
from oracles import airy_single_layer_r, fresnel_r

DB = MaterialDb()
D1 = DesignVector(190, 0.5, 0.6, 0.7, 650, 650, 550, 350, 500, 200)


def test_grid():
    assert len(WAVELENGTHS_NM) == 200
    assert WAVELENGTHS_NM[0] == 1250 and WAVELENGTHS_NM[-1] == 1850


def test_empty_stack_is_fresnel():
    r = stack_reflectance(LayerStack((), (), 1.0, 1.444), 1550.0)
    assert abs(r - fresnel_r(1.0, 1.444)) < 1e-15
    assert r == pytest.approx(0.0330038, abs=1e-7)


def test_single_film_matches_airy_sum():
    n1 = 2.1 + 0.05j
    for lam in (1250.0, 1550.0, 1850.0):
        r = stack_reflectance(LayerStack((n1,), (173.0,), 1.0, 1.444), lam)
        assert r == pytest.approx(airy_single_layer_r(1.0, n1, 1.444, 173.0, lam), abs=1e-13)


@settings(deadline=None, max_examples=50)
@given(
    st.lists(st.tuples(st.floats(1.0, 5.0), st.floats(0.0, 800.0)), min_size=0, max_size=5),
    st.integers(0, 5),
    st.floats(1000.0, 2000.0),
)
def test_zero_thickness_layer_is_noop(layers, pos, lam):
    idx = [complex(n, 0.1) for n, _ in layers]
    thick = [t for _, t in layers]
    pos = min(pos, len(idx))
    base = stack_reflectance(LayerStack(tuple(idx), tuple(thick)), lam)
    idx2 = tuple(idx[:pos] + [3.7 + 0.4j] + idx[pos:])
    thick2 = tuple(thick[:pos] + [0.0] + thick[pos:])
    assert abs(stack_reflectance(LayerStack(idx2, thick2), lam) - base) < 1e-12


@settings(deadline=None, max_examples=50)
@given(
    st.lists(st.tuples(st.floats(1.0, 5.0), st.floats(0.0, 800.0)), min_size=1, max_size=5),
    st.floats(1.0, 2.0),
    st.floats(1000.0, 2000.0),
)
def test_lossless_energy_conservation(layers, ns, lam):
    stack = LayerStack(tuple(complex(n) for n, _ in layers), tuple(t for _, t in layers), 1.0, ns)
    assert abs(stack_reflectance(stack, lam) + stack_transmittance(stack, lam) - 1) < 1e-9


@settings(deadline=None, max_examples=30)
@given(st.lists(st.tuples(st.floats(1.0, 5.0), st.floats(0.0, 800.0)), min_size=1, max_size=5))
def test_lossless_reciprocity(layers):
    idx = tuple(complex(n) for n, _ in layers)
    thick = tuple(t for _, t in layers)
    forward = LayerStack(idx, thick, 1.3, 1.3)
    backward = LayerStack(idx[::-1], thick[::-1], 1.3, 1.3)
    assert abs(stack_reflectance(forward, 1550.0) - stack_reflectance(backward, 1550.0)) < 1e-9


def test_ribbon_mixing():
    eps_au = -100 + 10j
    assert ribbon_layer_eps(0.5, eps_au) == pytest.approx(1 / (0.5 / eps_au + 0.5), rel=1e-15)
    assert ribbon_layer_eps(1 - 1e-12, eps_au) == pytest.approx(eps_au, rel=1e-9)
    assert ribbon_layer_eps(1e-12, eps_au) == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(ValueError):
        ribbon_layer_eps(1.0, eps_au)


def test_build_stack_layers_and_fill_factors():
    fills = [w / p for _, p, w in D1.blocks()]
    np.testing.assert_allclose(fills, [350 / 650, 500 / 650, 200 / 550])
    assert fills[0] == pytest.approx(0.538, abs=1e-3) and fills[2] == pytest.approx(0.3636, abs=1e-4)
    for i in (1, 2, 3):
        s = build_stack(D1, i, DB)
        assert len(s) == 3 and all(t > 0 for t in s.thicknesses)
        assert s.thicknesses == (50.0, 190.0, 100.0)
        eps_au = drude_eps(DB.au, WAVELENGTHS_NM)
        np.testing.assert_allclose(s.indices[0] ** 2, ribbon_layer_eps(fills[i - 1], eps_au), rtol=1e-12)
    with pytest.raises(ValueError):
        build_stack(D1, 4, DB)


def test_identical_blocks_give_identical_stacks():
    d = DesignVector(120, 0.3, 0.3, 0.8, 500, 500, 400, 200, 200, 150)
    a, b = build_stack(d, 1, DB), build_stack(d, 2, DB)
    for x, y in zip(a.indices, b.indices):
        assert np.array_equal(x, y)


def test_three_identical_blocks_equal_single_block():
    d = DesignVector(120, 0.3, 0.3, 0.3, 500, 500, 500, 200, 200, 200)
    single = stack_reflectance(build_stack(d, 1, DB), WAVELENGTHS_NM)
    assert np.array_equal(supercell_reflectance(d, DB), single)


def test_permutation_invariance_exact():
    base = supercell_reflectance(D1, DB)
    for order in itertools.permutations(range(3)):
        assert np.max(np.abs(supercell_reflectance(D1.permuted(order), DB) - base)) <= 1e-15


def test_spectrum_range_and_shape():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = supercell_reflectance(sample_design(DesignRanges(), rng), DB)
        assert s.shape == (200,) and np.all((s >= 0) & (s <= 1))


def test_gold_mirror_limit():
    eps_au = drude_eps(DB.au, WAVELENGTHS_NM)
    mirror = LayerStack((np.sqrt(eps_au + 0j),), (100.0,), 1.0, 1.444)
    assert np.all(stack_reflectance(mirror, WAVELENGTHS_NM) > 0.9)
    # skin depth near 23 nm leaves roughly 5e-5 through 100 nm of Drude gold
    assert np.all(stack_transmittance(mirror, WAVELENGTHS_NM) < 1e-4)


def test_continuity():
    rng = np.random.default_rng(1)
    bounds = DesignRanges().bounds()
    for _ in range(10):
        d = sample_design(DesignRanges(h=(50, 249), p=(300, 699)), rng)
        base = supercell_reflectance(d, DB)
        for name, col in (("h", 0), ("p1", 4), ("w2", 8)):
            step = 1e-6 * (bounds[col, 1] - bounds[col, 0])
            value = getattr(d, name)
            moved = d.replace(**{name: value - step if name.startswith("w") else value + step})
            assert np.max(np.abs(supercell_reflectance(moved, DB) - base)) < 1e-3


def test_invalid_designs():
    with pytest.raises(InvalidDesign):
        DesignVector(190, 0.55, 0.6, 0.7, 650, 650, 550, 350, 500, 200)
    with pytest.raises(InvalidDesign):
        DesignVector(190, 0.5, 0.6, 0.7, 650, 650, 550, 601, 500, 200)
    with pytest.raises(InvalidDesign):
        DesignVector(0, 0.5, 0.6, 0.7, 650, 650, 550, 350, 500, 200)
    with pytest.raises(InvalidDesign):
        DesignVector.parse("1,2,3")
    assert DesignVector.parse("190,0.5,0.6,0.7,650,650,550,350,500,200") == D1
