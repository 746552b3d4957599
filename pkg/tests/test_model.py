import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import check
from meshfield import autodiff as ad
from meshfield import shapes
from meshfield.errors import ConfigError, LevelOutOfRange, ShapeMismatch
from meshfield.mesh import TriangleMesh, normalize_mesh
from meshfield.metrics import loss_mse
from meshfield.model import (
    ModelConfig,
    build_model,
    component_forward,
    count_parameters,
    diffusion_layer,
    disable_level,
    fourier_forward,
    init_parameters,
    model_forward,
    predict,
)
from meshfield.spectral import diffuse, precompute_operators

SMALL = dict(n_levels=2, k_eig=40, width=6, fourier_width=8, features=2, blocks=2)


@pytest.fixture(scope="module")
def ops50():
    return precompute_operators(normalize_mesh(shapes.bumpy_sphere(50)), 50, with_gradients=True)


# -- configuration -----------------------------------------------------------------


def test_level_scales():
    cfg = ModelConfig()
    assert cfg.sigmas() == [2.0, 4.0, 8.0]
    np.testing.assert_allclose(cfg.diffusion_times(0.01), [0.04, 0.16, 0.64], rtol=1e-15)


@pytest.mark.parametrize(
    "field,value",
    [("n_levels", 0), ("fourier_width", 0), ("sigma_exp", 0.5), ("features", 0), ("head", "mlp"), ("kind", "x"), ("t_base", -1.0)],
)
def test_invalid_config(field, value):
    with pytest.raises(ConfigError):
        replace(ModelConfig(), **{field: value}).validate()


def test_alpha_list_length():
    with pytest.raises(ConfigError):
        ModelConfig(alpha=[30.0, 20.0]).validate()
    assert ModelConfig(alpha=[30.0, 20.0, 10.0]).alphas() == [30.0, 20.0, 10.0]


def test_initial_diffusion_times(ops50):
    model = build_model(ops50, ModelConfig(**SMALL))
    t_base = ops50.mean_edge_length**2
    assert model.t_base == pytest.approx(t_base)
    for i in (1, 2):
        t = ad.softplus_np(model.params[f"comp{i}.block0.t"].value)
        np.testing.assert_allclose(t, t_base * 4.0**i, rtol=1e-12)


def test_init_statistics():
    cfg = ModelConfig(fourier_width=2000, features=2)
    p = init_parameters(cfg, 0.01, seed=0)
    for i, sigma in enumerate(cfg.sigmas(), 1):
        B = p[f"fourier{i}.B"].value
        assert B.shape == (2000, 2)
        assert abs(B.std() - sigma) < 0.05 * sigma
    W1 = p["backbone1.W"].value
    assert np.abs(W1).max() <= 1.0 / 3
    bound = np.sqrt(6 / 2000) / 30
    assert np.abs(p["backbone2.W"].value).max() <= bound


def test_init_deterministic():
    a, b = init_parameters(ModelConfig(), 0.01, seed=3), init_parameters(ModelConfig(), 0.01, seed=3)
    assert all(np.array_equal(a[k].value, b[k].value) for k in a)
    c = init_parameters(ModelConfig(), 0.01, seed=4)
    assert not np.array_equal(a["backbone1.W"].value, c["backbone1.W"].value)


def test_k_eig_exceeding_basis(ops50):
    with pytest.raises(ConfigError):
        build_model(ops50, ModelConfig(k_eig=60))


# -- layers ---------------------------------------------------------------------------


def test_fourier_single_coefficient():
    eta = fourier_forward(np.array([[0.25]]), np.array([[1.0]]))
    np.testing.assert_allclose(eta.value, [[1.0]], atol=1e-15)


def test_fourier_zero_input_and_shape():
    B = np.random.default_rng(0).normal(size=(8, 2))
    assert np.all(fourier_forward(B, np.zeros((5, 2))).value == 0)
    with pytest.raises(ShapeMismatch):
        fourier_forward(B, np.zeros((5, 3)))


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(0.01, 1e3), seed=st.integers(0, 1000))
def test_fourier_bounded(scale, seed):
    rng = np.random.default_rng(seed)
    eta = fourier_forward(rng.normal(size=(6, 2)) * scale, rng.normal(size=(10, 2)) * scale).value
    assert np.abs(eta).max() <= 1.0


def test_zero_output_weights_give_zero_component(ops50):
    model = build_model(ops50, ModelConfig(**SMALL))
    model.params["comp1.out.W"].value[:] = 0
    model.params["comp1.out.b"].value[:] = 0
    assert np.all(component_forward(model, 1, ops50).value == 0)


def test_diffusion_projection_oracle(ops50):
    # t -> 0 over a band leaves the projection onto that band's eigenvectors
    u = np.random.default_rng(1).normal(size=(ops50.n, 3))
    Phi = ops50.basis.Phi[:, :20]
    ref = Phi @ (Phi.T @ (ops50.mass[:, None] * u))
    out = diffusion_layer(ad.as_node(u), ops50, (0, 20), np.full(3, -60.0)).value
    np.testing.assert_allclose(out, ref, atol=1e-12)
    # full spectrum: the projection is the identity
    full = diffusion_layer(ad.as_node(u), ops50, (0, 50), np.full(3, -60.0)).value
    np.testing.assert_allclose(full, u, atol=1e-10)


def test_diffusion_layer_matches_diffuse(ops50):
    u = np.random.default_rng(2).normal(size=(ops50.n, 2))
    t_hat = np.array([-1.0, 0.5])
    out = diffusion_layer(ad.as_node(u), ops50, (5, 30), t_hat).value
    ref = diffuse(ops50.basis, (5, 30), u, ad.softplus_np(t_hat), ops50.mass)
    np.testing.assert_allclose(out, ref, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(t1=st.floats(0, 5), t2=st.floats(0, 5), seed=st.integers(0, 100))
def test_diffusion_smooths_monotonically(ops50, t1, t2, seed):
    u = np.random.default_rng(seed).normal(size=ops50.n)
    m = ops50.mass

    def nonconstant_norm(t):
        d = diffuse(ops50.basis, None, u, t, m)
        d = d - (m * d).sum() / m.sum()
        return np.sqrt((m * d * d).sum())

    lo, hi = sorted((t1, t2))
    assert nonconstant_norm(hi) <= nonconstant_norm(lo) + 1e-12


# -- full model -----------------------------------------------------------------------


def reference_forward(model, ops):
    """Straight-line evaluation of the backbone and head given the component outputs."""
    p = {k: v.value for k, v in model.params.items()}
    X = ops.vertices
    h, hs = X, []
    for i, alpha in enumerate(model.config.alphas(), 1):
        d = component_forward(model, i, ops).value
        f = np.sin(alpha * (h @ p[f"backbone{i}.W"] + p[f"backbone{i}.b"]))
        eta = np.sin(2 * np.pi * d @ p[f"fourier{i}.B"].T)
        h = f + eta
        hs.append(h)
    if model.config.head == "concat_mlp":
        z = np.maximum(np.concatenate(hs, 1) @ p["head.hidden.W"] + p["head.hidden.b"], 0)
        return z @ p["head.out.W"] + p["head.out.b"]
    return p["head.bias"] + sum(hi @ p[f"head.O{i}.W"] for i, hi in enumerate(hs, 1))


@pytest.mark.parametrize("head", ["concat_mlp", "per_level_linear_sum"])
def test_forward_matches_reference(ops50, head):
    model = build_model(ops50, ModelConfig(**SMALL, head=head), seed=1)
    np.testing.assert_allclose(predict(model, ops50), reference_forward(model, ops50), atol=1e-12)


def test_activations_bounded(ops50):
    model = build_model(ops50, ModelConfig(**SMALL), seed=2)
    _, lv = model_forward(model, ops50, return_levels=True)
    for key in ("eta", "f"):
        assert all(np.abs(x.value).max() <= 1.0 for x in lv[key])


def test_forward_deterministic(ops50):
    model = build_model(ops50, ModelConfig(**SMALL), seed=2)
    np.testing.assert_array_equal(predict(model, ops50), predict(model, ops50))


def test_permutation_equivariance():
    base = shapes.grid(7, 7, jitter=0.3, seed=5)
    v = base.vertices.copy()
    v[:, 2] = 0.3 * np.sin(3 * v[:, 0]) * np.cos(2 * v[:, 1])
    m = normalize_mesh(TriangleMesh(v, base.faces))
    perm = np.random.default_rng(0).permutation(m.n_vertices)
    inv = np.argsort(perm)
    pm = TriangleMesh(m.vertices[perm], inv[m.faces])
    cfg = ModelConfig(**{**SMALL, "k_eig": m.n_vertices})
    # full spectrum so band operators are independent of eigenvector choice
    ops, pops = precompute_operators(m, m.n_vertices), precompute_operators(pm, m.n_vertices)
    model = build_model(ops, cfg, seed=0)
    pmodel = build_model(pops, cfg, seed=0)
    np.testing.assert_allclose(predict(pmodel, pops), predict(model, ops)[perm], atol=1e-9)


def test_disable_level_semantics(ops50):
    model = build_model(ops50, ModelConfig(**SMALL, head="per_level_linear_sum"), seed=3)
    full = predict(model, ops50)
    # zero B_2 and the head slice of level 2: disabling it changes nothing
    model.params["fourier2.B"].value[:] = 0
    model.params["head.O2.W"].value[:] = 0
    np.testing.assert_allclose(disable_level(model, 2, ops50), predict(model, ops50), atol=1e-15)
    assert not np.allclose(full, predict(model, ops50))
    with pytest.raises(LevelOutOfRange):
        disable_level(model, 3, ops50)
    with pytest.raises(LevelOutOfRange):
        disable_level(model, 0, ops50)


def test_disable_only_level_leaves_bias(ops50):
    model = build_model(ops50, ModelConfig(**{**SMALL, "n_levels": 1}), seed=0)
    out = disable_level(model, 1, ops50)
    p = model.params
    hidden = np.maximum(p["head.hidden.b"].value, 0)
    expected = hidden @ p["head.out.W"].value + p["head.out.b"].value
    np.testing.assert_allclose(out, np.tile(expected, (ops50.n, 1)), atol=1e-14)


def test_one_level_without_injection_is_sine_mlp(ops50):
    model = build_model(ops50, ModelConfig(**{**SMALL, "n_levels": 1}, head="per_level_linear_sum"), seed=0)
    model.params["fourier1.B"].value[:] = 0
    p = {k: v.value for k, v in model.params.items()}
    X = ops50.vertices
    ref = np.sin(30 * (X @ p["backbone1.W"] + p["backbone1.b"])) @ p["head.O1.W"] + p["head.bias"]
    np.testing.assert_allclose(predict(model, ops50), ref, atol=1e-14)


def test_plain_model_has_single_stack(ops50):
    model = build_model(ops50, ModelConfig(**{**SMALL, "kind": "plain_diffusionnet"}), seed=0)
    assert not any(k.startswith(("fourier", "backbone", "head")) for k in model.params)
    assert model.bands.ranges == ((0, 40),)
    assert predict(model, ops50).shape == (ops50.n, 3)


def test_parameter_count_closed_form():
    cfg = ModelConfig()
    H, F, m, N, B, C = 32, 2, 64, 3, 2, 3
    comp = (3 * H + H) + B * (H + (2 * H * H + H) + (H * H + H)) + (H * F + F)
    fourier = m * F
    backbone = (3 * m + m) + (N - 1) * (m * m + m)
    head = (N * m * N * m + N * m) + (N * m * C + C)
    assert count_parameters(init_parameters(cfg, 0.01)) == N * (comp + fourier) + backbone + head


def kink_free(model, offset=10.0):
    """Move every ReLU input well above zero.

    A central difference straddling a ReLU kink is meaningless, so the
    gradient checks run where each ReLU is in its linear regime.
    """
    for name, p in model.params.items():
        if name.endswith(("mlp0.b", "head.hidden.b")):
            p.value += offset
    return model


@pytest.mark.parametrize(
    "extra",
    [{}, {"head": "per_level_linear_sum"}, {"use_gradient_features": True}, {"kind": "plain_diffusionnet"}],
    ids=["concat", "linear_sum", "gradient_features", "plain"],
)
def test_full_model_gradients(ops50, extra):
    model = kink_free(build_model(ops50, ModelConfig(**SMALL, **extra), seed=0))
    target = np.random.default_rng(9).random((ops50.n, 3))
    check(lambda: loss_mse(model_forward(model, ops50), target), model.parameters())
