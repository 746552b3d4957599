"""Multi-level neural field: diffusion components, Fourier layers and a sine backbone.

Level ``i`` (1-based) owns a diffusion component restricted to the i-th band
of the eigenbasis, producing ``d_i`` (n x F). A Fourier layer lifts it to
``eta_i = sin(2 pi d_i B_i^T)`` (n x m), which is injected into the i-th sine
layer of the backbone::

    f_i = sin(alpha_i * (h_{i-1} W_i + b_i)),   h_i = f_i + eta_i,   h_0 = x

and the head reads all ``h_i``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from meshfield import autodiff as ad
from meshfield.autodiff import Parameter
from meshfield.errors import ConfigError, LevelOutOfRange, ShapeMismatch
from meshfield.spectral import MeshOperators, SpectrumBands, split_spectrum

HEADS = ("concat_mlp", "per_level_linear_sum")
KINDS = ("n_level", "plain_diffusionnet")


@dataclass
class ModelConfig:
    kind: str = "n_level"
    n_levels: int = 3
    k_eig: int = 200
    width: int = 32  # internal channels of each diffusion component
    blocks: int = 2
    features: int = 2  # F, output channels of each component
    fourier_width: int = 64  # m
    alpha: float | list = 30.0
    t_base: float | None = None  # None -> squared mean edge length of the mesh
    t_exp: float = 4.0
    sigma_base: float = 1.0
    sigma_exp: float = 2.0
    head: str = "concat_mlp"
    out_dim: int = 3
    use_gradient_features: bool = False

    def validate(self) -> "ModelConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")
        checks = {
            "n_levels": self.n_levels >= 1,
            "fourier_width": self.fourier_width >= 1,
            "features": self.features >= 1,
            "width": self.width >= 1,
            "blocks": self.blocks >= 0,
            "out_dim": self.out_dim >= 1,
            "k_eig": self.k_eig >= self.n_levels,
            "sigma_exp": self.sigma_exp >= 1,
            "t_exp": self.t_exp > 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ConfigError(f"invalid model config field(s): {', '.join(bad)}")
        if self.t_base is not None and not self.t_base > 0:
            raise ConfigError("t_base must be positive")
        if len(self.alphas()) != self.n_levels:
            raise ConfigError(f"alpha list must have {self.n_levels} entries")
        return self

    def alphas(self) -> list:
        if isinstance(self.alpha, (list, tuple)):
            return [float(a) for a in self.alpha]
        return [float(self.alpha)] * self.n_levels

    def sigmas(self) -> list:
        return [self.sigma_base * self.sigma_exp**i for i in range(1, self.n_levels + 1)]

    def diffusion_times(self, t_base: float) -> list:
        return [t_base * self.t_exp**i for i in range(1, self.n_levels + 1)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {', '.join(sorted(unknown))}")
        return cls(**data)


def inverse_softplus(t):
    t = np.asarray(t, dtype=np.float64)
    return t + np.log(-np.expm1(-t))


class _Init:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.params = {}

    def add(self, name, value):
        self.params[name] = Parameter(np.asarray(value, dtype=np.float64), name)

    def linear(self, prefix, fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        self.add(f"{prefix}.W", self.rng.uniform(-bound, bound, (fan_in, fan_out)))
        self.add(f"{prefix}.b", self.rng.uniform(-bound, bound, fan_out))


def _init_component(init, prefix, cfg, out_dim, t0):
    H = cfg.width
    init.linear(f"{prefix}.lift", 3, H)
    for b in range(cfg.blocks):
        p = f"{prefix}.block{b}"
        init.add(f"{p}.t", inverse_softplus(np.full(H, t0)))
        if cfg.use_gradient_features:
            bound = 1.0 / math.sqrt(H)
            init.add(f"{p}.grad.A_re", init.rng.uniform(-bound, bound, (H, H)))
            init.add(f"{p}.grad.A_im", init.rng.uniform(-bound, bound, (H, H)))
        in_dim = (3 if cfg.use_gradient_features else 2) * H
        init.linear(f"{p}.mlp0", in_dim, H)
        init.linear(f"{p}.mlp1", H, H)
    init.linear(f"{prefix}.out", H, out_dim)


def init_parameters(cfg: ModelConfig, t_base: float, seed: int = 0) -> dict:
    """Seeded parameter initialization in a fixed draw order."""
    cfg.validate()
    init = _Init(seed)
    if cfg.kind == "plain_diffusionnet":
        _init_component(init, "comp1", cfg, cfg.out_dim, cfg.diffusion_times(t_base)[0])
        return init.params
    m, F = cfg.fourier_width, cfg.features
    for i, (t0, sigma) in enumerate(zip(cfg.diffusion_times(t_base), cfg.sigmas()), 1):
        _init_component(init, f"comp{i}", cfg, F, t0)
        init.add(f"fourier{i}.B", init.rng.normal(0.0, sigma, (m, F)))
    for i, alpha in enumerate(cfg.alphas(), 1):
        fan_in = 3 if i == 1 else m
        bound = 1.0 / fan_in if i == 1 else math.sqrt(6.0 / m) / alpha
        init.add(f"backbone{i}.W", init.rng.uniform(-bound, bound, (fan_in, m)))
        init.add(f"backbone{i}.b", init.rng.uniform(-1 / math.sqrt(fan_in), 1 / math.sqrt(fan_in), m))
    N = cfg.n_levels
    if cfg.head == "concat_mlp":
        init.linear("head.hidden", N * m, N * m)
        init.linear("head.out", N * m, cfg.out_dim)
    else:
        bound = 1.0 / math.sqrt(m)
        for i in range(1, N + 1):
            init.add(f"head.O{i}.W", init.rng.uniform(-bound, bound, (m, cfg.out_dim)))
        init.add("head.bias", np.zeros(cfg.out_dim))
    return init.params


def count_parameters(params: dict) -> int:
    return int(sum(p.value.size for p in params.values() if p.trainable))


@dataclass(eq=False)
class FieldModel:
    config: ModelConfig
    params: dict
    bands: SpectrumBands
    t_base: float
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return 1 if self.config.kind == "plain_diffusionnet" else self.config.n_levels

    def parameters(self) -> list:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return count_parameters(self.params)

    def __call__(self, ops: MeshOperators, X=None, disabled=()):
        return model_forward(self, ops, X, disabled)


def build_model(ops: MeshOperators, config: ModelConfig, seed: int = 0, bands: SpectrumBands | None = None) -> FieldModel:
    config.validate()
    k = ops.basis.k
    if config.k_eig > k:
        raise ConfigError(f"k_eig={config.k_eig} exceeds the {k} precomputed eigenpairs")
    if bands is None:
        n_bands = 1 if config.kind == "plain_diffusionnet" else config.n_levels
        bands = split_spectrum(config.k_eig, n_bands)
    elif bands[len(bands) - 1][1] != config.k_eig:
        raise ConfigError("bands do not cover the configured k_eig")
    t_base = config.t_base if config.t_base is not None else ops.mean_edge_length**2
    params = init_parameters(config, t_base, seed)
    if count_parameters(params) == 0:
        raise ConfigError("model has no trainable parameters")
    return FieldModel(config, params, bands, float(t_base), seed)


def _linear(x, params, prefix):
    return ad.add(ad.matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.b"])


def _band_operators(ops: MeshOperators, band):
    lo, hi = band
    cache = ops.__dict__.setdefault("_band_cache", {})
    if band not in cache:
        Phi = ops.basis.Phi[:, lo:hi]
        cache[band] = (np.ascontiguousarray(Phi), np.ascontiguousarray((Phi * ops.mass[:, None]).T), ops.basis.lam[lo:hi])
    return cache[band]


def diffusion_layer(x, ops: MeshOperators, band, t_hat):
    """Spectral heat diffusion of every channel of ``x`` with learned times softplus(t_hat)."""
    Phi, PhiT_M, lam = _band_operators(ops, band)
    coeffs = ad.matmul(PhiT_M, x)
    return ad.matmul(Phi, ad.exp_scale(coeffs, lam, t_hat))


def gradient_features(x, ops: MeshOperators, params, prefix):
    """tanh of the inner product between each channel's tangent gradient and a learned
    rotation-scaling of the gradients (complex-linear in the tangent plane)."""
    if ops.gradients is None:
        raise ConfigError("gradient features requested but operators were built without gradients")
    gx = ad.matmul(ops.gradients.Gx, x)
    gy = ad.matmul(ops.gradients.Gy, x)
    A_re, A_im = params[f"{prefix}.A_re"], params[f"{prefix}.A_im"]
    bx = ad.sub(ad.matmul(gx, A_re), ad.matmul(gy, A_im))
    by = ad.add(ad.matmul(gy, A_re), ad.matmul(gx, A_im))
    return ad.tanh(ad.add(ad.mul(gx, bx), ad.mul(gy, by)))


def component_forward(model: FieldModel, level: int, ops: MeshOperators, X=None):
    """d_i for 1-based ``level``: lift, diffusion blocks with residual MLPs, linear out."""
    cfg, params = model.config, model.params
    prefix = f"comp{level}"
    band = model.bands[level - 1]
    X = ops.vertices if X is None else X
    x = _linear(ad.as_node(X), params, f"{prefix}.lift")
    for b in range(cfg.blocks):
        p = f"{prefix}.block{b}"
        xd = diffusion_layer(x, ops, band, params[f"{p}.t"])
        feats = [x, xd]
        if cfg.use_gradient_features:
            feats.append(gradient_features(xd, ops, params, f"{p}.grad"))
        h = ad.relu(_linear(ad.concat(feats, axis=1), params, f"{p}.mlp0"))
        x = ad.add(x, _linear(h, params, f"{p}.mlp1"))
    return _linear(x, params, f"{prefix}.out")


def fourier_forward(B, d):
    """eta = sin(2 pi d B^T); ``B`` is (m, F), ``d`` is (n, F)."""
    B, d = ad.as_node(B), ad.as_node(d)
    if d.shape[1] != B.shape[1]:
        raise ShapeMismatch(f"fourier layer expects {B.shape[1]} input features, got {d.shape[1]}")
    return ad.sin(ad.matmul(d, ad.transpose(B)), 2.0 * np.pi)


def model_forward(model: FieldModel, ops: MeshOperators, X=None, disabled=(), return_levels: bool = False):
    """Predictions (n x C) as a graph node.

    ``disabled`` lists 1-based levels whose Fourier injection and head slot
    are replaced by zeros.
    """
    cfg, params = model.config, model.params
    X = ops.vertices if X is None else np.asarray(X)
    if X.shape != (ops.n, 3):
        raise ShapeMismatch(f"X must be {ops.n} x 3, got {X.shape}")
    disabled = set(disabled)
    for i in disabled:
        if not 1 <= i <= model.n_levels:
            raise LevelOutOfRange(f"level {i} not in [1, {model.n_levels}]")
    if cfg.kind == "plain_diffusionnet":
        out = component_forward(model, 1, ops, X)
        if 1 in disabled:
            out = ad.zeros_like(out)
        return (out, {}) if return_levels else out

    h = ad.as_node(X)
    levels = {"d": [], "eta": [], "f": [], "h": []}
    for i, alpha in enumerate(cfg.alphas(), 1):
        f = ad.sin(_linear(h, params, f"backbone{i}"), alpha)
        if i in disabled:
            d = eta = None
            h = f
            slot = ad.zeros_like(f)
        else:
            d = component_forward(model, i, ops, X)
            eta = fourier_forward(params[f"fourier{i}.B"], d)
            h = ad.add(f, eta)
            slot = h
        for key, val in zip(("d", "eta", "f", "h"), (d, eta, f, slot)):
            levels[key].append(val)

    hs = levels["h"]
    if cfg.head == "concat_mlp":
        hidden = ad.relu(_linear(ad.concat(hs, axis=1), params, "head.hidden"))
        out = _linear(hidden, params, "head.out")
    else:
        out = params["head.bias"]
        for i, hi in enumerate(hs, 1):
            out = ad.add(out, ad.matmul(hi, params[f"head.O{i}.W"]))
    return (out, levels) if return_levels else out


def disable_level(model: FieldModel, level: int, ops: MeshOperators, X=None) -> np.ndarray:
    if not 1 <= level <= model.n_levels:
        raise LevelOutOfRange(f"level {level} not in [1, {model.n_levels}]")
    return model_forward(model, ops, X, disabled=(level,)).value


def predict(model: FieldModel, ops: MeshOperators, X=None, disabled=()) -> np.ndarray:
    return model_forward(model, ops, X, disabled).value
