import numpy as np
import pytest

from gaa import autodiff as ad
from gaa import model as gm
from gaa.errors import InputError
from gaa.graph import build_graph, load_supermodules, self_loop_neighborhoods
from gaa.testkit import dense_attention_matrix, dense_reference_gat
from helpers import numeric_grad, random_connected_graph, rel_err


def _layer(rng, n_heads, f_out, f_in):
    return (rng.normal(size=(n_heads * f_out, f_in)), rng.normal(size=(n_heads, 2 * f_out)))


def test_gat_layer_matches_dense_oracle(rng):
    for _ in range(10):
        g = random_connected_graph(rng, int(rng.integers(2, 30)))
        heads, f_out, f_in = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
        W, att = _layer(rng, heads, f_out, f_in)
        h = rng.normal(size=(g.n_nodes, f_in))
        tape = ad.Tape()
        out = gm.gat_layer(tape.constant(W), tape.constant(att), tape.constant(h), self_loop_neighborhoods(g))
        assert np.max(np.abs(out.value - dense_reference_gat(W, att, h, g))) <= 1e-10


def test_attention_rows_sum_to_one(rng):
    for _ in range(50):
        g = random_connected_graph(rng, int(rng.integers(2, 40)))
        nb = self_loop_neighborhoods(g)
        heads = int(rng.integers(1, 5))
        W, att = _layer(rng, heads, 3, 4)
        h = 3 * rng.normal(size=(g.n_nodes, 4))
        coef = gm.attention_coefficients(W, att, h, nb)
        sums = np.zeros((g.n_nodes, heads))
        np.add.at(sums, nb.dst, coef)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12
        dense = np.zeros((g.n_nodes, g.n_nodes))
        dense[nb.dst, nb.src] = coef[:, 0]
        np.testing.assert_allclose(dense, dense_attention_matrix(W, att, h, g), atol=1e-12)


def test_star_attention_uniform_on_constant_input(star_graph, rng):
    W, att = _layer(rng, 2, 3, 1)
    coef = gm.attention_coefficients(W, att, np.ones((5, 1)), self_loop_neighborhoods(star_graph))
    nb = self_loop_neighborhoods(star_graph)
    c = star_graph.index_of("c")
    np.testing.assert_allclose(coef[nb.dst == c], 0.2, atol=1e-15)  # c and its four leaves


def _toy_setup(toy6, width=3, seed=0, **kw):
    g, mods = toy6
    cfg = gm.ModelConfig(g.n_nodes, mods.n_modules, width, heads=2, head_width=3, gat2_width=2,
                         dec_width=2, mlp_hidden=4, **kw)
    return g, mods, cfg, gm.init_params(cfg, seed), gm.Structure(g, mods)


def test_param_shapes(toy6):
    g, mods, cfg, params, _ = _toy_setup(toy6)
    assert params["enc.gat1.W"].shape == (6, 3)
    assert params["dec.W1"].shape == (6, 2)
    assert params["mlp.W2"].shape == (2, 4)
    for name in ("enc.pool_b", "dec.b1", "mlp.b1", "mlp.b2"):
        assert np.all(params[name] == 0)
    bad = dict(params)
    bad["mlp.W2"] = np.zeros((3, 4))
    with pytest.raises(InputError):
        gm.check_params(bad, cfg)


def test_forward_shapes(toy6, rng):
    g, mods, cfg, params, struct = _toy_setup(toy6)
    xg = rng.random((4, 6, 3))
    _, _, out = gm.forward(params, xg, struct, cfg)
    assert out.z.shape == (4, 2)
    assert out.recon.shape == (24, 3)
    np.testing.assert_allclose(out.probs.value.sum(axis=1), 1.0, atol=1e-15)
    with pytest.raises(InputError):
        gm.forward(params, rng.random((4, 6, 2)), struct, cfg)


def test_classify_example():
    params = {"mlp.W1": np.eye(2), "mlp.b1": np.zeros((1, 2)), "mlp.W2": np.eye(2), "mlp.b2": np.zeros((1, 2))}
    np.testing.assert_allclose(gm.classify(params, [0.0, np.log(3.0)]), [[0.25, 0.75]], atol=1e-15)


def test_batching_does_not_change_predictions(toy6, rng):
    g, mods, cfg, params, struct = _toy_setup(toy6)
    params = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in params.items()}
    xg = rng.random((7, 6, 3))
    p1, z1 = gm.predict(params, xg, struct, cfg, batch_size=1)
    p3, z3 = gm.predict(params, xg, struct, cfg, batch_size=3)
    np.testing.assert_allclose(p1, p3, atol=1e-13)
    np.testing.assert_allclose(z1, z3, atol=1e-13)


def test_node_relabelling_equivariance(toy6, rng):
    g, mods, cfg, params, struct = _toy_setup(toy6)
    # rename nodes so that the sorted order, and therefore every index array, changes
    rename = dict(zip("abcdef", ["z5", "z3", "z0", "z4", "z1", "z2"]))
    g2 = build_graph([(rename[a], rename[b]) for a, b in g.edge_list()])
    mods2 = load_supermodules("m1\tx\tz5\tz3\tz0\nm2\tx\tz0\tz4\tz1\tz2\n", g2)
    perm = [g2.index_of(rename[v]) for v in g.node_ids]
    xg = rng.random((3, 6, 3))
    xg2 = np.zeros_like(xg)
    xg2[:, perm] = xg
    p1, z1 = gm.predict(params, xg, struct, cfg)
    p2, z2 = gm.predict(params, xg2, gm.Structure(g2, mods2), cfg)
    np.testing.assert_allclose(z1, z2, atol=1e-12)
    np.testing.assert_allclose(p1, p2, atol=1e-12)


@pytest.mark.parametrize("aggregator", ["mean", "sum", "max"])
def test_end_to_end_gradients(toy6, aggregator):
    rng = np.random.default_rng(7)
    g, mods, cfg, params, struct = _toy_setup(toy6, aggregator=aggregator, seed=3)
    params = {k: v + 0.3 * rng.normal(size=v.shape) for k, v in params.items()}
    xg = rng.random((3, 6, 3))
    labels = np.array([1, 0, 1])
    weights = np.array([0.8, 1.4])

    def value():
        _, _, out = gm.forward(params, xg, struct, cfg, trainable=False)
        return gm.loss(out, labels, weights, 0.5)[0].value[0, 0]

    tape, P, out = gm.forward(params, xg, struct, cfg)
    tape.backward(gm.loss(out, labels, weights, 0.5)[0])
    for name in sorted(params):
        ana = P[name].grad if P[name].grad is not None else np.zeros_like(params[name])
        num = numeric_grad(value, params[name])
        assert rel_err(num, ana) <= 1e-4, f"{name}: {rel_err(num, ana):.2e}"


def test_gamma_range(toy6, rng):
    g, mods, cfg, params, struct = _toy_setup(toy6)
    _, _, out = gm.forward(params, rng.random((2, 6, 3)), struct, cfg)
    with pytest.raises(InputError):
        gm.loss(out, [0, 1], [1, 1], 1.5)


def test_gamma_zero_removes_reconstruction(toy6, rng):
    g, mods, cfg, params, struct = _toy_setup(toy6)
    xg = rng.random((2, 6, 3))
    tape, P, out = gm.forward(params, xg, struct, cfg)
    total, lc, _ = gm.loss(out, [0, 1], [1.0, 1.0], 0.0)
    assert total.value[0, 0] == lc.value[0, 0]
    tape.backward(total)
    assert P["dec.W2"].grad is None or np.all(P["dec.W2"].grad == 0)


def test_zero_input_gives_bias_embedding(toy6):
    g, mods, cfg, params, struct = _toy_setup(toy6)
    params = dict(params, **{"enc.pool_b": np.array([[0.3, -0.7]])})
    _, z = gm.predict(params, np.zeros((1, 6, 3)), struct, cfg)
    np.testing.assert_array_equal(z, [[0.3, -0.7]])


def test_zero_embedding_decodes_to_zero(toy6):
    g, mods, cfg, params, struct = _toy_setup(toy6)
    tape = ad.Tape()
    P = {k: tape.constant(v) for k, v in params.items()}
    recon = gm.decode(P, tape.constant(np.zeros((2, 2))), struct)
    assert recon.shape == (12, 3)
    np.testing.assert_array_equal(recon.value, 0.0)


def test_zero_classifier_is_uniform():
    params = {"mlp.W1": np.zeros((3, 4)), "mlp.b1": np.zeros((1, 3)), "mlp.W2": np.zeros((2, 3)),
              "mlp.b2": np.zeros((1, 2))}
    np.testing.assert_array_equal(gm.classify(params, np.ones(4)), [[0.5, 0.5]])


def test_zero_attention_vector_averages_neighbourhood(rng):
    g = random_connected_graph(rng, 9)
    nb = self_loop_neighborhoods(g)
    h = rng.normal(size=(9, 2))
    tape = ad.Tape()
    out = gm.gat_layer(tape.constant(np.eye(2)), tape.constant(np.zeros((1, 4))), tape.constant(h), nb)
    adj = g.csr_adj.toarray() + np.eye(9)
    mean = (adj @ h) / adj.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out.value, np.where(mean > 0, mean, np.expm1(mean)), atol=1e-14)


@pytest.mark.parametrize("aggregator", ["sum", "mean", "max"])
def test_sup_pool_examples(aggregator, rng):
    h = rng.normal(size=(5, 3))
    tape = ad.Tape()
    single = gm.sup_pool(tape.constant(h), np.array([2]), np.array([0, 1]), aggregator)
    np.testing.assert_array_equal(single.value, h[[2]])
    a = gm.sup_pool(tape.constant(h), np.array([0, 3, 4, 1]), np.array([0, 3, 4]), aggregator)
    b = gm.sup_pool(tape.constant(h), np.array([4, 0, 3, 1]), np.array([0, 3, 4]), aggregator)
    if aggregator == "max":
        np.testing.assert_array_equal(a.value, b.value)
    else:
        np.testing.assert_allclose(a.value, b.value, atol=1e-15)
    if aggregator == "mean":
        pair = gm.sup_pool(tape.constant(h), np.array([1, 3]), np.array([0, 2]), "mean")
        np.testing.assert_allclose(pair.value[0], (h[1] + h[3]) / 2, atol=1e-15)


def test_unknown_aggregator(rng):
    tape = ad.Tape()
    with pytest.raises(InputError):
        gm.sup_pool(tape.constant(np.ones((2, 2))), np.array([0]), np.array([0, 1]), "median")
