import math

import numpy as np
import pytest
from conftest import acyclic_graphs, make_graph

from lossforge import _pykernel, kernel, ops
from lossforge.evolve import random_graph
from lossforge.graph import (STANDARD_GRID, LossGraph, Node, ParseError, Phenotype,
                             StructuralError, active_nodes, compile_program, elementwise,
                             from_document, loss, loss_gradient,
                             normalize_phenotype, parse, phenotype, serialize, standard_grid,
                             to_document, to_expression, write_phenotype_csv)
from lossforge.integrity import integrity_check
from lossforge.references import reference_loss

CE = reference_loss("ce")
INPUTS = {"one": 1.0, "neg_one": -1.0}


def naive(graph, ref, y, yhat, depth=0):
    """Tree expansion: shared nodes are recomputed at every use."""
    assert depth < 50
    if ref == "y":
        return y
    if ref == "yhat":
        return yhat
    if ref in INPUTS:
        return INPUTS[ref]
    node = graph.root if ref == "root" else graph.node(ref)
    args = [naive(graph, a, y, yhat, depth + 1) for a in node.args]
    with np.errstate(all="ignore"):
        return float(ops.apply(ops.get(node.op).index, *[np.float64(a) for a in args]))


def node_values(graph, y, yhat):
    vals = {}
    for ref in sorted(active_nodes(graph) | {"root"}):
        if ref.startswith("h") or ref == "root":
            vals[ref] = naive(graph, ref, y, yhat)
    return vals


def branch_signature(graph, y, yhat):
    """Which side of every kink each active node sits on."""
    sig = []
    for ref in sorted(active_nodes(graph) | {"root"}):
        if not (ref.startswith("h") or ref == "root"):
            continue
        node = graph.root if ref == "root" else graph.node(ref)
        args = [naive(graph, a, y, yhat) for a in node.args]
        if node.op in ("abs", "relu", "neg_relu", "ln_abs_eps", "log10_abs_eps", "bessel_i0e",
                       "bessel_i1e", "d_softsign"):
            sig.append(np.sign(args[0]))
        elif node.op in ("max", "min"):
            sig.append(np.sign(args[0] - args[1]))
        elif node.op == "arctanh":
            sig.append(abs(args[0]) >= ops.ARCTANH_CLAMP)
        elif node.op == "recip_eps":
            sig.append(np.sign(args[0] + ops.EPS))
        elif node.op == "div_eps":
            sig.append(np.sign(args[1] + ops.EPS))
    return tuple(sig)


# --- evaluation ---------------------------------------------------------------

def test_elementwise_examples():
    assert elementwise(CE, 1.0, 0.5) == pytest.approx(math.log(0.5 + 1e-7), rel=1e-15)
    assert elementwise(CE, 0.0, 0.5) == 0.0
    g = make_graph([("mul", "y", "yhat")], ("add", "one", "h0"))
    assert elementwise(g, 2.0, 3.0) == 7.0


def test_loss_examples():
    assert loss(CE, [1, 0], [1, 0]) == pytest.approx(-0.5 * math.log(1 + 1e-7), rel=1e-12)
    assert loss(CE, [1, 0], [0.5, 0.5]) == pytest.approx(-0.5 * math.log(0.5 + 1e-7), rel=1e-12)
    const = make_graph([("square", "neg_one")], ("mul", "h0", "one"), sign=-1)
    assert loss(const, [0.0], [0.0]) == -1.0


def test_loss_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        loss(CE, [1, 0], [0.5, 0.25, 0.25])
    with pytest.raises(ValueError):
        loss_gradient(CE, [1, 0, 0], [0.5, 0.5])


def test_gradient_examples():
    g = loss_gradient(CE, [1, 0], [0.5, 0.5])
    assert g[0] == pytest.approx(-1 / (2 * (0.5 + 1e-7)), rel=1e-12)
    assert g[1] == 0.0
    no_yhat = make_graph([("square", "y")], ("add", "h0", "one"))
    assert np.all(loss_gradient(no_yhat, [1, 0, 1], [0.2, 0.3, 0.5]) == 0.0)


def test_memoized_matches_naive_expansion(rng):
    ys, ps = rng.uniform(0, 1, 5), rng.uniform(0, 1, 5)
    for g in acyclic_graphs(rng, 100):
        for y, p in zip(ys, ps):
            expected = naive(g, "root", y, p)
            got = elementwise(g, y, p)
            if math.isnan(expected):
                assert math.isnan(got)
            else:
                assert got == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_permutation_invariance_is_exact(rng):
    for g in acyclic_graphs(rng, 30):
        y = rng.uniform(0, 1, 64)
        p = rng.uniform(0, 1, 64)
        perm = rng.permutation(64)
        a, b = loss(g, y, p), loss(g, y[perm], p[perm])
        assert a == b or (math.isnan(a) and math.isnan(b))


def test_cycle_is_a_structural_error():
    g = make_graph([("neg", "h1"), ("add", "h0", "yhat")], ("add", "h0", "y"))
    with pytest.raises(StructuralError):
        compile_program(g)


def test_gradients_match_finite_differences():
    """200 random integrity-passing graphs, finite differences at random points."""
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 200:
        verdict = integrity_check(random_graph(rng))
        if not verdict.accepted:
            continue
        g = verdict.graph
        for _ in range(20):  # resample points that straddle a kink
            y, p = rng.uniform(0.01, 0.99, 2)
            h = 1e-6
            sig = branch_signature(g, y, p)
            if sig != branch_signature(g, y, p + h) or sig != branch_signature(g, y, p - h):
                continue
            grad = loss_gradient(g, [y], [p])[0]
            fd = (loss(g, [y], [p + h]) - loss(g, [y], [p - h])) / (2 * h)
            if not (math.isfinite(grad) and math.isfinite(fd)):
                continue
            assert abs(grad - fd) <= 1e-4 * max(1.0, abs(grad)), (to_expression(g), y, p, grad, fd)
            checked += 1
            break


def test_vector_gradient_matches_finite_differences(rng):
    g = reference_loss("neuroloss1")
    y = np.array([1.0, 0.0, 0.0])
    p = np.array([0.6, 0.3, 0.1])
    grad = loss_gradient(g, y, p)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        fd = (loss(g, y, p + e) - loss(g, y, p - e)) / 2e-6
        assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_backends_agree(rng):
    if "cython" not in kernel.BACKENDS:
        pytest.skip("compiled kernel not built")
    c, py = kernel.BACKENDS["cython"], kernel.BACKENDS["python"]
    y = (rng.uniform(size=(40, 3)) > 0.5).astype(float)
    p = rng.dirichlet(np.ones(3), size=40)
    with np.errstate(all="ignore"):
        for g in acyclic_graphs(rng, 300):
            vc, gc = c.forward_grad(g.program, y, p)
            vp, gp = py.forward_grad(g.program, y, p)
            np.testing.assert_allclose(vc, vp, rtol=1e-12, atol=1e-300, equal_nan=True)
            # adjoint sums can cancel, so allow an absolute floor
            np.testing.assert_allclose(gc, gp, rtol=1e-9, atol=1e-12, equal_nan=True)
            np.testing.assert_array_equal(c.forward(g.program, y, p), vc)


def test_pure_python_kernel_matches_dispatch():
    y = np.array([[1.0, 0.0]] * 3)
    p = np.array([[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]])
    for name in ("ce", "neuroloss1", "bessel"):
        prog = reference_loss(name).program
        np.testing.assert_allclose(_pykernel.forward(prog, y, p), kernel.forward(prog, y, p), rtol=1e-14)


# --- structure ----------------------------------------------------------------

def test_active_nodes():
    fig1 = make_graph([("ln_abs_eps", "yhat"), ("mul", "y", "h0"), ("exp", "y"), ("neg", "h1")],
                      ("add", "h3", "h1"))
    assert "h2" not in active_nodes(fig1)
    chain = make_graph([("neg", "yhat"), ("exp", "h0"), ("add", "h1", "y"), ("mul", "h2", "h0")],
                       ("neg", "h3"))
    assert {"h0", "h1", "h2", "h3"} <= active_nodes(chain)
    simple = make_graph([("exp", "yhat")], ("add", "h0", "y"))
    assert active_nodes(simple) == {"h0", "yhat", "y"}


def test_graph_validation():
    with pytest.raises(ValueError):
        make_graph([("exp", "yhat")], ("add", "y", "yhat"))      # root needs a hidden argument
    with pytest.raises(ValueError):
        Node("add", ("y",))
    with pytest.raises(ValueError):
        Node("exp", ("root",))
    with pytest.raises(ValueError):
        make_graph([("exp", "yhat")], ("neg", "h0"), sign=2)


# --- phenotype ----------------------------------------------------------------

def test_standard_grid():
    grid = standard_grid()
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert np.all(np.diff(grid) > 0)
    assert len(grid) == 2009
    for j in range(2, 8):
        assert np.any(np.isclose(grid, 1 - 10.0 ** -j, rtol=0, atol=1e-15))
    assert not STANDARD_GRID.flags.writeable


def test_phenotype_examples():
    ce = phenotype(CE)
    assert ce.finite and np.all(np.diff(ce.values) < 0)
    const = make_graph([("neg", "neg_one")], ("max", "one", "h0"), sign=-1)
    assert np.all(phenotype(const).values == -1.0)


def test_neuroloss_phenotype_minimum():
    ph = phenotype(reference_loss("neuroloss1"))
    i = int(np.argmin(ph.values))
    steps = np.abs(ph.grid - 0.99998)
    assert steps[i] <= np.max(np.diff(ph.grid)[max(0, i - 1):i + 1])
    assert np.sum(ph.values == ph.values.min()) == 1


def test_sign_flip_negates_phenotype_exactly(rng):
    for g in acyclic_graphs(rng, 30):
        a, b = phenotype(g).values, phenotype(g.flipped()).values
        np.testing.assert_array_equal(a, -b)


def test_normalize_phenotype():
    grid = np.array([0.0, 0.5, 1.0])
    np.testing.assert_array_equal(normalize_phenotype(Phenotype(grid, [2, 4, 6])).values, [0, 0.5, 1])
    np.testing.assert_array_equal(normalize_phenotype(Phenotype(grid, [5, 5, 5])).values, [0, 0, 0])
    ce = normalize_phenotype(phenotype(CE)).values
    assert ce[0] == 1.0 and ce.min() == 0.0
    with pytest.raises(ValueError):
        normalize_phenotype(Phenotype(grid, [1, np.inf, 0]))


def test_phenotype_csv(tmp_path):
    path = tmp_path / "ce.csv"
    write_phenotype_csv(phenotype(CE), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "p,loss" and len(lines) == 2010
    p, v = map(float, lines[1000].split(","))
    assert v == phenotype(CE).values[999]


# --- serialization ------------------------------------------------------------

def test_round_trip_random_graphs(rng):
    for _ in range(500):
        g = random_graph(rng)
        if rng.uniform() < 0.5:
            g = g.flipped()
        assert parse(serialize(g)) == g
        assert from_document(to_document(g)) == g


def test_round_trip_keeps_phenotype_bits():
    again = parse(serialize(CE))
    np.testing.assert_array_equal(phenotype(again).values, phenotype(CE).values)
    smoothed = reference_loss("ce_ls010")
    assert parse(serialize(smoothed)) == smoothed


@pytest.mark.parametrize("mutate,message", [
    (lambda d: d["hidden"][2].update(op="foo"), "hidden[2].op: unknown operation 'foo'"),
    (lambda d: d["root"].update(arg1="h9"), "root.arg1: bad reference"),
    (lambda d: d["hidden"][0].update(arg2="y"), "hidden[0]: arity mismatch"),
    (lambda d: d["root"].pop("arg2"), "root: arity mismatch"),
    (lambda d: d.update(sign=0), "sign"),
    (lambda d: d.update(version=7), "version"),
    (lambda d: d["hidden"].pop(), "hidden"),
])
def test_parse_errors_have_locations(mutate, message):
    doc = to_document(CE)
    mutate(doc)
    import json
    with pytest.raises(ParseError, match=message.replace("[", r"\[").replace("]", r"\]")):
        parse(json.dumps(doc))


def test_parse_rejects_malformed_json():
    with pytest.raises(ParseError, match="line 1"):
        parse('{"version": 1,')


# --- rendering ----------------------------------------------------------------

def test_expressions():
    assert to_expression(CE) == "-(1/n)*sum(y*ln(abs(yhat)+eps))"
    assert to_expression(CE) == to_expression(reference_loss("ce"))
    nl1 = to_expression(reference_loss("neuroloss1"))
    assert nl1.count("yhat/(y+eps)") >= 2  # shared node rendered at every use


def test_expression_of_cyclic_graph_does_not_loop():
    g = make_graph([("neg", "h1"), ("add", "h0", "yhat")], ("add", "h0", "y"))
    text = to_expression(g)
    assert "h0" in text or "h1" in text


def test_graph_is_immutable():
    with pytest.raises(Exception):
        CE.sign = 1
    assert isinstance(CE.hidden, tuple) and isinstance(CE, LossGraph)
