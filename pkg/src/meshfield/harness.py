"""Experiment drivers: target construction, baselines, training and evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from meshfield import autodiff as ad
from meshfield.config import ExperimentConfig
from meshfield.errors import ConfigError, MeshFieldError, TrainingError
from meshfield.mesh import TriangleMesh, normalize_mesh, partition_by_x, subdivide_threshold, vertex_normals
from meshfield.meshio import load_mesh
from meshfield.metrics import (
    UVDistortion,
    loss_cosine,
    loss_mse,
    per_vertex_cosine,
    per_vertex_error,
    uv_distortion,
    vertex_error_cdf,
)
from meshfield.model import FieldModel, ModelConfig, build_model, count_parameters, init_parameters, model_forward
from meshfield.optim import AdamState, LrSchedule, adam_step, lr_at
from meshfield.spectral import MeshOperators, SpectralBasis, precompute_operators
from meshfield.synth import perlin_scalar, synth_patchwork_rgb

log = logging.getLogger(__name__)

CAPACITY_TOLERANCE = 0.10


# -- targets -------------------------------------------------------------------


def group_field(mesh: TriangleMesh, basis: SpectralBasis | None, spec: dict) -> np.ndarray:
    src = spec["source"]
    if src == "eigenfunction":
        idx = int(spec["index"])
        if basis is None or not 1 <= idx <= basis.k:
            raise ConfigError(f"eigenfunction index {idx} outside the computed basis")
        return basis.Phi[:, idx - 1]
    if src == "perlin":
        return perlin_scalar(mesh, float(spec.get("frequency", 1.0)), int(spec.get("seed", 0))).values[:, 0]
    if src == "constant":
        return np.full(mesh.n_vertices, float(spec.get("value", 0.0)))
    raise ConfigError(f"unknown group source {src!r}")


def synthesize_rgb(mesh, basis, thresholds, groups, on_constant="raise"):
    """Return (rgb VertexField, VertexPartition) for a thresholded patchwork."""
    partition = partition_by_x(mesh, thresholds)
    fields = [group_field(mesh, basis, g) for g in groups]
    return synth_patchwork_rgb(mesh, partition, fields, on_constant=on_constant), partition


@dataclass
class Task:
    """A mesh with its operators and supervision target."""

    mesh: TriangleMesh
    ops: MeshOperators
    target: np.ndarray
    loss: str  # "mse" or "cosine"
    partition: object = None

    def loss_node(self, pred):
        return loss_mse(pred, self.target) if self.loss == "mse" else loss_cosine(pred, self.target)


def prepare_task(cfg: ExperimentConfig, mesh: TriangleMesh) -> Task:
    """Normalize ``mesh``, precompute operators and build the task's target."""
    mesh = normalize_mesh(mesh)
    if cfg.model.k_eig > mesh.n_vertices:
        raise ConfigError(f"k_eig={cfg.model.k_eig} exceeds the mesh's {mesh.n_vertices} vertices")
    ops = precompute_operators(mesh, cfg.model.k_eig, cfg.model.use_gradient_features)
    if cfg.task == "rgb_synthetic":
        rgb, partition = synthesize_rgb(mesh, ops.basis, cfg.group_thresholds, cfg.groups)
        return Task(mesh, ops, rgb.values, "mse", partition)
    if cfg.task == "uv_supervised":
        if mesh.uv is None:
            raise ConfigError("uv_supervised task needs a mesh with texture coordinates")
        return Task(mesh, ops, mesh.uv, "mse")
    return Task(mesh, ops, vertex_normals(mesh).values, "cosine")


# -- baselines --------------------------------------------------------------------


def model_config_for(cfg: ExperimentConfig, out_dim: int) -> ModelConfig:
    reference = replace(cfg.model, out_dim=out_dim)
    if cfg.baseline == "n_level":
        return reference.validate()
    return build_baseline_config(cfg.baseline, reference, cfg.capacity_match)


def _count(cfg: ModelConfig) -> int:
    return count_parameters(init_parameters(cfg, 1.0, 0))


def build_baseline_config(kind: str, reference: ModelConfig, capacity_match: bool = True) -> ModelConfig:
    """Baseline model config, optionally with its width scaled to match ``reference``'s size.

    ``one_level`` is the full architecture with a single level; ``plain_diffusionnet``
    is one diffusion stack over the whole spectrum with a linear output.
    """
    alpha = reference.alphas()[0]
    if kind == "one_level":
        base = replace(reference, kind="n_level", n_levels=1, alpha=alpha)
    elif kind == "plain_diffusionnet":
        base = replace(reference, kind="plain_diffusionnet", n_levels=1, alpha=alpha)
    else:
        raise ConfigError(f"unknown baseline {kind!r}")
    base.validate()
    if not capacity_match:
        return base
    target = _count(reference)
    lo, hi = 1, 4096
    while lo < hi:
        mid = (lo + hi) // 2
        if _count(replace(base, width=mid)) < target:
            lo = mid + 1
        else:
            hi = mid
    best = min((max(1, lo - 1), lo), key=lambda w: abs(_count(replace(base, width=w)) - target))
    matched = replace(base, width=best)
    got = _count(matched)
    if abs(got - target) > CAPACITY_TOLERANCE * target:
        raise ConfigError(f"cannot match {kind} capacity: {got} vs {target} parameters")
    return matched


def build_baseline(kind: str, ops: MeshOperators, reference: ModelConfig, seed: int = 0, capacity_match: bool = True) -> FieldModel:
    return build_model(ops, build_baseline_config(kind, reference, capacity_match), seed=seed)


# -- training -------------------------------------------------------------------------


@dataclass
class MetricsReport:
    per_vertex_error: np.ndarray
    final_loss: float
    losses: list
    wall_clock: float
    cdf: list = field(default_factory=list)
    uv: UVDistortion | None = None
    summary: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    model: FieldModel
    adam: AdamState
    iteration: int
    report: MetricsReport
    prediction: np.ndarray
    tasks: list = field(default_factory=list)


def _schedule(cfg: ExperimentConfig) -> LrSchedule:
    return LrSchedule(cfg.lr, cfg.lr_decay, cfg.lr_decay_every)


def optimize(model: FieldModel, tasks: list, cfg: ExperimentConfig, adam: AdamState | None = None, start: int = 0, callback=None):
    """Full-batch Adam over ``cfg.iterations`` steps, cycling through ``tasks``.

    Iteration ``it`` trains on ``tasks[it % len(tasks)]``. Returns the loss
    history.
    """
    adam = adam or AdamState()
    schedule = _schedule(cfg)
    losses = []
    params = model.parameters()
    for it in range(start, start + cfg.iterations):
        task = tasks[it % len(tasks)]
        try:
            # every op checks its own output, so numpy's float warnings are noise
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                loss = task.loss_node(model_forward(model, task.ops))
                ad.backward(loss)
                adam_step(params, adam, lr_at(schedule, it))
        except MeshFieldError as exc:
            raise TrainingError(it, exc) from exc
        value = float(loss.value)
        losses.append(value)
        log.debug("iter %d loss %.6e", it, value)
        if callback is not None:
            callback(it, value)
    return adam, losses


def evaluate(model: FieldModel, task: Task, disabled=()) -> tuple:
    """Return (prediction, loss, per-vertex error) for ``task``."""
    pred_node = model_forward(model, task.ops, disabled=disabled)
    loss = float(task.loss_node(pred_node).value)
    pred = pred_node.value
    if task.loss == "cosine":
        err = per_vertex_cosine(pred, task.target)
    else:
        err = per_vertex_error(pred, task.target)
    return pred, loss, err


def _report(cfg, model, task, losses, t0, extra=None):
    pred, final_loss, err = evaluate(model, task)
    subsets = [np.arange(len(err))]
    names = ["all"]
    if task.partition is not None:
        for g in range(task.partition.group_count):
            idx = task.partition.group(g)
            if idx.size:
                subsets.append(idx)
                names.append(f"group{g + 1}")
    normalizer = float(err.max()) if err.max() > 0 else 1.0
    cdf = vertex_error_cdf(err, subsets, normalizer)
    summary = {
        "task": cfg.task,
        "baseline": cfg.baseline,
        "seed": cfg.seed,
        "iterations": cfg.iterations,
        "n_vertices": task.mesh.n_vertices,
        "n_parameters": model.n_parameters(),
        "final_loss": final_loss,
        "last_iteration_loss": losses[-1] if losses else None,
        "mean_vertex_error": {n: float(err[s].mean()) for n, s in zip(names, subsets)},
        "median_vertex_error": {n: float(np.median(err[s])) for n, s in zip(names, subsets)},
    }
    uv = None
    if cfg.task == "uv_supervised":
        uv = uv_distortion(task.mesh, pred, task.target)
        summary["uv"] = uv.summary()
    if extra:
        summary.update(extra)
    report = MetricsReport(err, final_loss, losses, time.perf_counter() - t0, cdf, uv, summary)
    return report, pred


def train(cfg: ExperimentConfig, mesh: TriangleMesh | None = None) -> TrainResult:
    """Train one model on a single-mesh task (rgb_synthetic or uv_supervised)."""
    if cfg.task == "normals_generalization":
        return run_generalization(cfg, mesh)
    t0 = time.perf_counter()
    cfg.validate(check_files=mesh is None)
    mesh = mesh if mesh is not None else load_mesh(cfg.mesh)
    task = prepare_task(cfg, mesh)
    model = build_model(task.ops, model_config_for(cfg, task.target.shape[1]), seed=cfg.seed)
    adam, losses = optimize(model, [task], cfg)
    report, pred = _report(cfg, model, task, losses, t0)
    return TrainResult(model, adam, cfg.iterations, report, pred, [task])


def subdivision_levels(base: TriangleMesh, threshold: float | None, count: int) -> list:
    """Normalized meshes 0..count-1, each midpoint-subdivided from the previous one.

    Without an explicit threshold each level splits the edges longer than its
    own mean edge length, so refinement never stalls.
    """
    meshes = [normalize_mesh(base)]
    for _ in range(1, count):
        t = threshold if threshold is not None else meshes[-1].mean_edge_length()
        meshes.append(normalize_mesh(subdivide_threshold(meshes[-1], t)))
    return meshes


def run_generalization(cfg: ExperimentConfig, mesh: TriangleMesh | None = None) -> TrainResult:
    """Train on some subdivision levels of a base mesh, evaluate on a held-out one.

    Training alternates meshes round-robin, one full mesh per iteration.
    """
    t0 = time.perf_counter()
    cfg.validate(check_files=mesh is None)
    base = mesh if mesh is not None else load_mesh(cfg.mesh)
    n_levels = max(max(cfg.train_levels), cfg.test_level) + 1
    meshes = subdivision_levels(base, cfg.subdivision_threshold, n_levels)
    tasks = {lvl: prepare_task(cfg, meshes[lvl]) for lvl in sorted(set(cfg.train_levels) | {cfg.test_level})}
    train_tasks = [tasks[lvl] for lvl in cfg.train_levels]
    test = tasks[cfg.test_level]
    model = build_model(train_tasks[0].ops, model_config_for(cfg, 3), seed=cfg.seed)
    adam, losses = optimize(model, train_tasks, cfg)
    train_losses = {str(lvl): evaluate(model, tasks[lvl])[1] for lvl in cfg.train_levels}
    extra = {
        "test_level": cfg.test_level,
        "train_levels": list(cfg.train_levels),
        "train_losses": train_losses,
        "final_train_loss": float(np.mean(list(train_losses.values()))),
        "mesh_sizes": {str(lvl): [t.mesh.n_vertices, t.mesh.n_faces] for lvl, t in tasks.items()},
    }
    report, pred = _report(cfg, model, test, losses, t0, extra)
    report.summary["test_loss"] = report.final_loss
    return TrainResult(model, adam, cfg.iterations, report, pred, [tasks[lvl] for lvl in sorted(tasks)])
