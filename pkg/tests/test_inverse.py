import numpy as np
import pytest

from metadr.dataset import DesignRanges
from metadr.dr_design import encode_design
from metadr.inverse import (
    Constraint,
    ConstraintSet,
    DesignModels,
    InverseModel,
    SearchConfig,
    SearchError,
    TargetSpec,
    band_mse,
    design,
    parameter_grid,
    search_designs,
    target_reduced_design,
    train_inverse,
    valid_mask,
    verify_candidates,
)
from metadr.materials import MaterialDb
from metadr.nnet import TrainConfig, mse
from metadr.pipeline import constant_baseline
from metadr.surrogate import DesignVector, supercell_reflectance
from oracles import brute_force_nearest

RANGES = DesignRanges()
COARSE_PINS = ConstraintSet.parse(["lc1=0.3", "lc2=0.7"])


def _valid(row):
    try:
        d = DesignVector.from_array(row)
    except ValueError:
        return False
    return RANGES.contains(d) and d.lc1 == 0.3 and d.lc2 == 0.7


def test_constraint_parsing():
    c = Constraint.parse("h=190")
    assert (c.param, c.op, c.value, c.is_pin) == ("h", "=", 190.0, True)
    assert Constraint.parse("w1 >= 150").op == ">="
    assert Constraint.parse("lc1=lc2").value == "lc2"
    for bad in ("x=1", "h~3", "h=zz"):
        with pytest.raises(ValueError):
            Constraint.parse(bad)
    d = DesignVector(190, 0.5, 0.6, 0.7, 650, 650, 550, 350, 500, 200)
    assert Constraint.parse("h=190")(d) and not Constraint.parse("w1<300")(d)


def test_valid_mask_matches_design_checks():
    axes = parameter_grid(RANGES, 2)
    rng = np.random.default_rng(0)
    rows = np.column_stack([rng.choice(a, size=500) for a in axes])
    rows[:, 7:10] = rng.uniform(100, 650, size=(500, 3))
    expected = []
    for r in rows:
        try:
            expected.append(RANGES.contains(DesignVector.from_array(r)))
        except ValueError:
            expected.append(False)
    assert np.array_equal(valid_mask(rows, RANGES), expected)


def test_grid_search_matches_brute_force(small_models):
    _, pe, _ = small_models
    axes = parameter_grid(RANGES, 3)
    axes[1], axes[2] = np.array([0.3]), np.array([0.7])
    target = np.random.default_rng(1).normal(size=pe.k)
    want, want_dist, n_cells = brute_force_nearest(lambda x: encode_design(pe, x), axes, target, _valid)
    assert n_cells <= 100_000
    got = search_designs(pe, target, RANGES, SearchConfig(strategy="grid", resolution=3, top_k=3), COARSE_PINS)
    assert tuple(got[0][0].as_array()) == want
    assert got[0][1] == want_dist
    assert got[0][1] <= got[1][1] <= got[2][1]


def test_grid_member_recovered_exactly(small_models):
    _, pe, _ = small_models
    member = DesignVector(50, 0.3, 0.7, 1.0, 300, 500, 700, 100, 375, 650)
    got = search_designs(
        pe, encode_design(pe, member), RANGES, SearchConfig(strategy="grid", resolution=3, top_k=1), COARSE_PINS
    )
    assert got[0][0] == member
    assert got[0][1] <= 1e-20


def test_pin_respected_by_every_strategy(small_models):
    _, pe, _ = small_models
    target = np.zeros(pe.k)
    for strategy in ("random", "beam"):
        cfg = SearchConfig(strategy=strategy, budget=20_000, top_k=4, refine_rounds=2)
        found = search_designs(pe, target, RANGES, cfg, ConstraintSet.parse(["h=190", "w1>=150"]))
        assert len(found) == 4
        assert all(d.h == 190 and d.w1 >= 150 for d, _ in found)
        dists = [s for _, s in found]
        assert dists == sorted(dists)


def test_random_budget_million(small_models):
    _, pe, _ = small_models
    found = search_designs(pe, np.ones(pe.k), RANGES, SearchConfig(strategy="random", budget=1_000_000, top_k=4))
    assert len(found) == 4 and found[0][1] <= found[-1][1]


def test_impossible_constraints(small_models):
    _, pe, _ = small_models
    with pytest.raises(SearchError):
        search_designs(pe, np.zeros(pe.k), RANGES, SearchConfig(strategy="random", budget=1000),
                       ConstraintSet.parse(["h>1000"]))


def test_band_mse_and_verification():
    d = DesignVector(190, 0.5, 0.6, 0.7, 650, 650, 550, 350, 500, 200)
    spec = supercell_reflectance(d, MaterialDb())
    assert verify_candidates([d], TargetSpec(spec))[0][1] < 1e-12
    assert band_mse(np.full(200, 0.3), TargetSpec.flat(0.1, (1500, 1700))) == pytest.approx(0.04, rel=1e-12)
    others = [DesignVector(h, 0.5, 0.6, 0.7, 650, 650, 550, 350, 500, 200) for h in (60, 120, 240)]
    ranked = verify_candidates(others + [d], TargetSpec(spec))
    scores = [s for _, s in ranked]
    assert scores == sorted(scores) and ranked[0][0] == d
    with pytest.raises(ValueError):
        TargetSpec.flat(0.0, (1000, 1200))


def test_inverse_training(small_models, small_data):
    ae, pe, inv = small_models
    _, train, val = small_data
    from metadr.dr_response import encode_response

    pred = inv.head(encode_response(ae, val.spectra))
    truth = encode_design(pe, val.designs)
    base = constant_baseline(encode_design(pe, train.designs), truth)
    assert mse(pred, truth) < base
    for a, b in zip(inv.encoder.weights, ae.encoder.weights):
        assert np.array_equal(a, b)
    zero, rep = train_inverse(train, val, ae, pe, (10, 16, 8, 5), TrainConfig(max_epochs=0, seed=3))
    assert rep.epochs_run == 0
    assert target_reduced_design(zero, val.spectra[0]).shape == (5,)
    np.testing.assert_array_equal(target_reduced_design(inv, val.spectra[0]), target_reduced_design(inv, val.spectra[0]))


def test_inverse_save_load(tmp_path, small_models):
    _, _, inv = small_models
    inv.save(tmp_path / "inv.json")
    back = InverseModel.load(tmp_path / "inv.json")
    x = np.linspace(0, 1, 200)
    assert np.array_equal(target_reduced_design(back, x), target_reduced_design(inv, x))


def test_design_report(small_models):
    ae, pe, inv = small_models
    models = DesignModels(ae, pe, inv)
    target = TargetSpec.flat(0.0, (1500, 1700))
    cfg = SearchConfig(budget=5000, top_k=4, refine_rounds=1, n_verify=50)
    report = design(target, models, cfg)
    assert report == design(target, models, cfg)
    assert len(report["designs"]) == 4
    designs = [tuple(r["design"].values()) for r in report["designs"]]
    assert len(set(designs)) == 4
    single = design(target, models, SearchConfig(budget=5000, top_k=1, refine_rounds=1, n_verify=50))
    assert len(single["designs"]) == 1
    assert single["designs"][0]["band_mse"] == min(r["band_mse"] for r in report["designs"])
    pinned = design(target, models, cfg, ConstraintSet.parse(["h=190"]))
    assert all(r["design"]["h"] == 190 for r in pinned["designs"])
