import json
from dataclasses import replace

import numpy as np
import pytest

from meshfield import checkpoint as ckpt
from meshfield import export, shapes
from meshfield.config import ExperimentConfig, load_config, validate_groups
from meshfield.errors import CheckpointError, ConfigError, NonFinite, TrainingError
from meshfield.harness import (
    _count,
    build_baseline_config,
    evaluate,
    optimize,
    prepare_task,
    run_generalization,
    subdivision_levels,
    train,
)
from meshfield.model import ModelConfig, build_model, predict
from meshfield.optim import AdamState

SMALL_MODEL = {"k_eig": 30, "width": 8, "fourier_width": 16}


def small_cfg(**kw):
    groups = [{"source": "eigenfunction", "index": 2}, {"source": "eigenfunction", "index": 12}, {"source": "perlin", "frequency": 3.0, "seed": 1}]
    base = {"task": "rgb_synthetic", "mesh": "unused.obj", "iterations": 15, "groups": groups, **SMALL_MODEL}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


@pytest.fixture(scope="module")
def mesh():
    return shapes.sphere(200)


# -- config -----------------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = small_cfg(seed=4)
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    back = load_config(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()


@pytest.mark.parametrize(
    "patch",
    [{"task": "segmentation"}, {"baseline": "mlp"}, {"iterations": 0}, {"lr_decay": 0.0}, {"n_levels": 0}],
)
def test_config_rejects(patch):
    with pytest.raises(ConfigError):
        small_cfg(**patch).validate(check_files=False)


def test_config_unknown_key_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"mesh": "a.obj", "colour": 1})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        small_cfg(mesh=str(tmp_path / "nope.obj")).validate()


@pytest.mark.parametrize(
    "thresholds,groups",
    [
        ([0.0], [{"source": "constant"}]),
        ([0.5, 0.1], [{"source": "constant"}] * 3),
        ([], [{"source": "eigenfunction", "index": 0}]),
        ([], [{"source": "eigenfunction", "index": 31}]),
        ([], [{"source": "wave"}]),
    ],
)
def test_group_validation(thresholds, groups):
    with pytest.raises(ConfigError):
        validate_groups(thresholds, groups, 30)


# -- baselines -------------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["one_level", "plain_diffusionnet"])
def test_capacity_matching(kind):
    ref = ModelConfig()
    cfg = build_baseline_config(kind, ref)
    target = _count(ref)
    assert abs(_count(cfg) - target) <= 0.10 * target
    assert cfg.n_levels == 1 and cfg.kind == ("n_level" if kind == "one_level" else kind)


def test_unmatched_baseline_keeps_width():
    assert build_baseline_config("one_level", ModelConfig(), capacity_match=False).width == 32
    with pytest.raises(ConfigError):
        build_baseline_config("nerf", ModelConfig())


# -- training ----------------------------------------------------------------------------------


def test_train_deterministic_and_decreasing(mesh):
    a = train(small_cfg(iterations=40), mesh)
    b = train(small_cfg(iterations=40), mesh)
    assert a.report.losses == b.report.losses
    np.testing.assert_array_equal(a.prediction, b.prediction)
    assert np.mean(a.report.losses[-5:]) < a.report.losses[0]
    s = a.report.summary
    assert set(s["mean_vertex_error"]) == {"all", "group1", "group2", "group3"}
    assert s["final_loss"] == pytest.approx(float(np.mean(a.report.per_vertex_error)) * 3, rel=1e-12)


def test_seed_changes_result(mesh):
    a = train(small_cfg(), mesh)
    b = train(small_cfg(seed=1), mesh)
    assert a.report.losses != b.report.losses


def test_resume_matches_uninterrupted(mesh):
    cfg = small_cfg(iterations=20)
    task = prepare_task(cfg, mesh)
    ref_model = build_model(task.ops, replace(cfg.model, out_dim=3), seed=0)
    _, ref_losses = optimize(ref_model, [task], cfg)

    half = replace(cfg, iterations=10)
    model = build_model(task.ops, replace(cfg.model, out_dim=3), seed=0)
    adam, first = optimize(model, [task], half)
    model2, adam2, it, _ = ckpt.loads(ckpt.dumps(model, adam, 10))
    _, second = optimize(model2, [task], half, adam2, start=it)
    assert first + second == ref_losses
    np.testing.assert_array_equal(predict(model2, task.ops), predict(ref_model, task.ops))


def test_training_error_carries_iteration(mesh):
    cfg = small_cfg(iterations=5)
    task = prepare_task(cfg, mesh)
    model = build_model(task.ops, replace(cfg.model, out_dim=3))
    task.target = task.target.copy()
    task.target[0, 0] = np.nan
    with pytest.raises(TrainingError) as info:
        optimize(model, [task], cfg)
    assert info.value.iteration == 0 and isinstance(info.value.cause, NonFinite)


def test_k_eig_larger_than_mesh():
    with pytest.raises(ConfigError):
        prepare_task(small_cfg(), shapes.sphere(20))


def test_uv_task_reports_distortion():
    g = shapes.grid(8, 8, jitter=0.1)
    from meshfield.mesh import TriangleMesh

    m = TriangleMesh(g.vertices + [0, 0, 0.01] * np.sin(g.vertices[:, :1] * 3), g.faces, g.vertices[:, :2].copy())
    r = train(small_cfg(task="uv_supervised", iterations=10), m)
    assert set(r.report.summary["uv"]) >= {"flipped_percent", "area_distortion_mean", "angle_distortion_mean"}
    assert r.prediction.shape == (64, 2)


def test_subdivision_levels_grow():
    levels = subdivision_levels(shapes.bumpy_sphere(100), None, 3)
    counts = [m.n_faces for m in levels]
    assert counts[0] < counts[1] < counts[2]
    for m in levels:
        assert abs(np.linalg.norm(m.vertices, axis=1).max() - 1) < 1e-12


def test_generalization_run():
    cfg = small_cfg(task="normals_generalization", iterations=6, train_levels=[0, 1], test_level=2)
    r = run_generalization(cfg, shapes.bumpy_sphere(120))
    s = r.report.summary
    assert set(s["train_losses"]) == {"0", "1"} and 0 <= s["test_loss"] <= 2
    assert s["mesh_sizes"]["2"][0] > s["mesh_sizes"]["0"][0]
    assert [t.mesh.n_vertices for t in r.tasks] == sorted(t.mesh.n_vertices for t in r.tasks)


# -- checkpoint ---------------------------------------------------------------------------------


def test_checkpoint_round_trip(mesh, tmp_path):
    r = train(small_cfg(iterations=5, head="per_level_linear_sum", alpha=[30.0, 20.0, 10.0]), mesh)
    path = tmp_path / "m.mfck"
    ckpt.save_checkpoint(path, r.model, r.adam, 5, {"note": "x"})
    model, adam, it, meta = ckpt.load_checkpoint(path)
    assert it == 5 and meta["extra"] == {"note": "x"} and adam.step == 5
    assert model.config == r.model.config and model.bands == r.model.bands
    for k, p in r.model.params.items():
        np.testing.assert_array_equal(model.params[k].value, p.value)
        np.testing.assert_array_equal(adam.m[k], r.adam.m[k])
    assert ckpt.dumps(model, adam, it, meta["extra"]) == path.read_bytes()
    np.testing.assert_array_equal(predict(model, r.tasks[0].ops), r.prediction)


def test_checkpoint_corruption(mesh, tmp_path):
    r = train(small_cfg(iterations=1), mesh)
    raw = ckpt.dumps(r.model, r.adam, 1)
    with pytest.raises(CheckpointError):
        ckpt.loads(b"XXXXX" + raw[5:])
    with pytest.raises(CheckpointError):
        ckpt.loads(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError):
        ckpt.load_checkpoint(tmp_path / "missing.mfck")


# -- export ---------------------------------------------------------------------------------------


def test_error_colors_ramp():
    c = export.error_colors(np.array([0.0, 0.5, 1.0, 7.0]), clip=1.0)
    np.testing.assert_array_equal(c[0], [68, 1, 84])
    np.testing.assert_array_equal(c[2], [253, 231, 37])
    np.testing.assert_array_equal(c[3], c[2])
    np.testing.assert_array_equal(c[1], [33, 145, 140])


def test_json_and_csv_helpers(tmp_path):
    export.write_json(tmp_path / "a.json", {"b": np.float64(np.inf), "a": np.arange(2)})
    assert json.loads((tmp_path / "a.json").read_text()) == {"a": [0, 1], "b": None}
    vals = np.random.default_rng(0).normal(size=(4, 3))
    export.write_field_csv(tmp_path / "f.csv", vals)
    np.testing.assert_array_equal(export.read_field_csv(tmp_path / "f.csv"), vals)
