import numpy as np
import pytest
from conftest import acyclic_graphs, make_graph

from lossforge.graph import Phenotype, phenotype
from lossforge.integrity import (DEGENERATE, MONOTONE_DECREASING, MONOTONE_INCREASING,
                                 MULTIMODAL, NONFINITE, PARABOLIC_MAX, PARABOLIC_MIN, REASONS,
                                 PhenotypeClass, SimilarityPool, VerdictLog, classify,
                                 has_cycle, inputs_present, integrity_check, near_half_reject,
                                 orient, phenotype_distance, too_similar)
from lossforge.references import reference_loss

CE = reference_loss("ce")


def curve(values, grid=None):
    values = np.asarray(values, dtype=float)
    return Phenotype(np.linspace(0, 1, values.size) if grid is None else grid, values)


# --- structure ----------------------------------------------------------------

def test_has_cycle():
    two = make_graph([("neg", "h1"), ("exp", "h0")], ("add", "h0", "y"))
    self_loop = make_graph([("add", "h0", "yhat")], ("mul", "h0", "y"))
    inputs_only = make_graph([("exp", "yhat"), ("mul", "y", "one"), ("neg", "neg_one")],
                             ("add", "h0", "h1"))
    assert has_cycle(two) and has_cycle(self_loop) and not has_cycle(inputs_only)


def test_inactive_cycle_is_ignored():
    g = make_graph([("ln_abs_eps", "yhat"), ("neg", "h2"), ("neg", "h1")], ("mul", "y", "h0"))
    assert not has_cycle(g)


def test_inputs_present():
    no_y = make_graph([("square", "yhat")], ("neg", "h0"))
    y_inactive = make_graph([("square", "yhat"), ("mul", "y", "yhat")], ("neg", "h0"))
    assert not inputs_present(no_y)
    assert inputs_present(CE)
    assert not inputs_present(y_inactive)


# --- classification -----------------------------------------------------------

def test_classify_examples():
    assert classify(phenotype(CE)).tag == MONOTONE_DECREASING
    assert classify(curve([0, 1, 0])).tag == MULTIMODAL
    neg = phenotype(CE.flipped())
    assert classify(neg).tag == MONOTONE_INCREASING


def test_classify_parabolas_and_degenerates():
    x = np.linspace(0, 1, 101)
    low = classify(Phenotype(x, (x - 0.8) ** 2))
    assert low.tag == PARABOLIC_MIN and low.optimum_p == pytest.approx(0.8)
    high = classify(Phenotype(x, -(x - 0.3) ** 2))
    assert high.tag == PARABOLIC_MAX and high.optimum_p == pytest.approx(0.3)
    assert classify(Phenotype(x, np.cos(6 * np.pi * x))).tag == MULTIMODAL
    assert classify(Phenotype(x, np.full_like(x, 3.0))).tag == DEGENERATE
    assert classify(Phenotype(x, np.where(x < 0.5, 1.0, np.inf))).tag == NONFINITE


def test_plateau_within_tolerance_is_one_run():
    # floating-point plateau at the minimum must not read as two minima
    v = np.array([1.0, 0.5, 0.0, 1e-9, 0.0, 0.4, 0.9])
    assert classify(curve(v)).tag == PARABOLIC_MIN


def test_tied_endpoint_extremes_are_multimodal():
    # two global-maximum runs, one at each end; hm7 has this shape
    assert classify(curve([1.0, 0.2, 0.0, 0.3, 1.0])).tag == MULTIMODAL
    assert classify(curve([1.0, 0.2, 0.0, 0.3, 0.9])).tag == PARABOLIC_MIN


# --- orientation ----------------------------------------------------------------

def test_orient():
    neg = CE.flipped()
    flipped, cls = orient(neg, classify(phenotype(neg)))
    assert flipped == CE and cls.tag == MONOTONE_DECREASING
    np.testing.assert_array_equal(phenotype(flipped).values, phenotype(CE).values)
    same, _ = orient(CE, classify(phenotype(CE)))
    assert same is CE
    _, cls = orient(CE, PhenotypeClass(PARABOLIC_MAX, 0.8))
    assert cls == PhenotypeClass(PARABOLIC_MIN, 0.8)
    for bad in (MULTIMODAL, NONFINITE):
        with pytest.raises(ValueError):
            orient(CE, PhenotypeClass(bad))


def test_near_half():
    assert near_half_reject(PhenotypeClass(PARABOLIC_MIN, 0.5))
    assert near_half_reject(PhenotypeClass(PARABOLIC_MIN, 0.503))
    assert near_half_reject(PhenotypeClass(PARABOLIC_MIN, 0.497))
    assert not near_half_reject(PhenotypeClass(PARABOLIC_MIN, 0.6))
    assert not near_half_reject(PhenotypeClass(MONOTONE_DECREASING))


# --- similarity -----------------------------------------------------------------

def test_similarity():
    ce = phenotype(CE)
    assert too_similar(ce, [ce])
    double = Phenotype(ce.grid, 2 * ce.values)
    assert too_similar(double, [ce])
    nl1 = phenotype(reference_loss("neuroloss1"))
    d = phenotype_distance(ce, nl1)
    assert d == pytest.approx(0.013634, abs=1e-5)  # recorded oracle value
    assert not too_similar(nl1, [ce])
    assert phenotype_distance(ce, nl1, rms=False) == pytest.approx(d * np.sqrt(ce.grid.size))
    assert not too_similar(ce, [])


def test_similarity_grid_mismatch():
    with pytest.raises(ValueError):
        phenotype_distance(curve([0, 1, 2]), curve([0, 1, 2, 3]))
    pool = SimilarityPool([curve([0, 1, 2])])
    with pytest.raises(ValueError):
        pool.min_distance(curve([0, 1]))


def test_pool_matches_pairwise_distance(rng):
    phs = [phenotype(g) for g in acyclic_graphs(rng, 40)]
    phs = [p for p in phs if p.finite]
    pool = SimilarityPool(phs[1:])
    expected = min(phenotype_distance(phs[0], p) for p in phs[1:])
    assert pool.min_distance(phs[0]) == pytest.approx(expected, rel=1e-12, abs=1e-15)


# --- the full check -----------------------------------------------------------

FIXTURES = {
    "cycle": make_graph([("neg", "h1"), ("add", "h0", "yhat")], ("add", "h0", "y")),
    "missing_input": make_graph([("square", "yhat")], ("neg", "h0")),
    "nonfinite": make_graph([("sqrt", "h1"), ("sub", "yhat", "y")], ("mul", "h0", "y")),
}


def test_fixture_reasons():
    assert integrity_check(FIXTURES["cycle"]).reason == "cycle"
    assert integrity_check(FIXTURES["missing_input"]).reason == "missing_input"
    assert integrity_check(FIXTURES["nonfinite"]).reason == "nonfinite"


def test_multimodal_and_near_half_fixtures():
    wave = make_graph([("add", "yhat", "yhat"), ("add", "h0", "h0"), ("add", "h1", "h1"),
                       ("sin", "h2")], ("mul", "h3", "y"))
    # y=(1,0): loss = sin(8p)/2, which has a max near p=0.196 and a min near 0.589, so multimodal
    assert integrity_check(wave).reason == "multimodal"
    # log10|yhat / (y + eps)| peaks at p = 0.5; orientation turns the cap into a cup
    half = make_graph([("div_eps", "yhat", "y")], ("log10_abs_eps", "h0"))
    v = integrity_check(half)
    assert v.reason == "optimum_near_half"
    assert v.phenotype_class == PhenotypeClass(PARABOLIC_MIN, 0.5) and v.oriented_sign == -1


def test_ce_accepted_and_duplicate_rejected():
    v = integrity_check(CE)
    assert v.accepted and v.reason == "ok" and v.oriented_sign == -1
    dup = integrity_check(CE, [phenotype(CE)])
    assert dup.reason == "too_similar" and not dup.accepted


def test_sign_flip_is_exact_negation():
    v = integrity_check(CE.flipped())
    assert v.accepted and v.graph == CE and v.oriented_sign == CE.sign
    np.testing.assert_array_equal(v.phenotype.values, -phenotype(CE.flipped()).values)


def test_accepted_graphs_satisfy_every_clause(rng):
    for g in acyclic_graphs(rng, 300):
        v = integrity_check(g)
        assert v.accepted == (v.reason == "ok")
        assert v.reason in REASONS
        if not v.accepted:
            continue
        assert not has_cycle(v.graph) and inputs_present(v.graph)
        assert v.phenotype.finite
        assert v.phenotype_class.tag in (MONOTONE_DECREASING, PARABOLIC_MIN)
        if v.phenotype_class.tag == PARABOLIC_MIN:
            assert abs(v.phenotype_class.optimum_p - 0.5) > 0.005
        again = integrity_check(v.graph)
        assert again.accepted and again.oriented_sign == v.oriented_sign


def test_references_pass_except_hm7():
    for name in ("ce", "neuroloss1", "neuroloss2", "neuroloss3", "bessel", "ce_ls010",
                 "hm1", "hm2", "hm3", "hm4", "hm5", "hm6"):
        assert integrity_check(reference_loss(name)).accepted, name
    assert integrity_check(reference_loss("hm7")).reason == "multimodal"


def test_verdict_log(tmp_path):
    path = tmp_path / "integrity.csv"
    with VerdictLog(path) as log:
        log.write(3, integrity_check(CE), CE)
        assert log.tell() > 0
    assert path.read_text().splitlines() == [
        "iteration,reason,expression", "3,ok,-(1/n)*sum(y*ln(abs(yhat)+eps))"]
    with VerdictLog(path, append=True) as log:
        log.write(4, integrity_check(FIXTURES["cycle"]), FIXTURES["cycle"])
    assert path.read_text().splitlines()[-1].startswith("4,cycle,")
