"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 checkpoint/mesh incompatibility.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from meshfield import checkpoint as ckpt
from meshfield import export
from meshfield.config import ExperimentConfig, load_config, validate_groups
from meshfield.errors import CheckpointError, ConfigError, ConstantField, MeshFieldError, ParseError, TrainingError
from meshfield.harness import evaluate, prepare_task, run_generalization, synthesize_rgb, train
from meshfield.mesh import normalize_mesh, subdivide_threshold
from meshfield.meshio import load_mesh, save_mesh
from meshfield.spectral import assemble_laplacian, cached_eigs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_COMPAT = 0, 2, 3, 4

log = logging.getLogger("meshfield")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_input_mesh(path):
    try:
        return load_mesh(path)
    except FileNotFoundError:
        raise CliError(f"mesh file not found: {path}", EXIT_CONFIG) from None
    except MeshFieldError as exc:
        raise CliError(f"cannot load mesh {path}: {exc}", EXIT_CONFIG) from exc


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.baseline is not None:
            cfg.baseline = args.baseline
        if args.iterations is not None:
            cfg.iterations = args.iterations
        cfg.validate()
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    mesh = _load_input_mesh(cfg.mesh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    try:
        if cfg.task == "normals_generalization":
            result = run_generalization(cfg, mesh)
        else:
            result = train(cfg, mesh)
    except TrainingError as exc:
        raise CliError(f"numeric failure at iteration {exc.iteration}: {exc.cause}", EXIT_NUMERIC) from exc
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    elapsed = time.perf_counter() - t0

    report = result.report
    eval_task = result.tasks[-1] if cfg.task != "normals_generalization" else _test_task(result, cfg)
    extra = {
        "config": cfg.to_dict(),
        "task": cfg.task,
        "mesh_hash": eval_task.mesh.content_hash(),
        "final_loss": report.final_loss,
    }
    outputs = []

    def emit(name):
        p = out / name
        outputs.append(p)
        return p

    ckpt.save_checkpoint(emit("checkpoint.mfck"), result.model, result.adam, result.iteration, extra)
    export.write_vertex_errors(emit("vertex_errors.csv"), report.per_vertex_error)
    export.write_field_csv(emit("prediction.csv"), result.prediction)
    export.write_losses(emit("losses.csv"), report.losses)
    if report.uv is not None:
        export.write_face_metrics(emit("face_metrics.csv"), report.uv)
    export.write_error_ply(emit("errors.ply"), eval_task.mesh, report.per_vertex_error, cfg.error_clip)
    # timings live only in the manifest so metrics.json is reproducible byte for byte
    summary = dict(report.summary, config=cfg.to_dict())
    export.write_json(emit("metrics.json"), summary)
    export.write_manifest(out, "train", cfg.to_dict(), cfg.seed, [args.config, cfg.mesh], outputs, {"total_seconds": elapsed})
    print(f"final loss {report.final_loss:.6e} ({cfg.iterations} iterations, {elapsed:.1f}s) -> {out}")
    return EXIT_OK


def _test_task(result, cfg):
    # tasks are stored in ascending level order
    levels = sorted(set(cfg.train_levels) | {cfg.test_level})
    return result.tasks[levels.index(cfg.test_level)]


def cmd_eval(args) -> int:
    if args.disable_level is not None and args.disable_level < 1:
        raise CliError("--disable-level is 1-based", EXIT_CONFIG)
    try:
        model, _adam, _it, meta = ckpt.load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_COMPAT) from exc
    extra = meta.get("extra", {})
    try:
        cfg = ExperimentConfig.from_dict(extra["config"])
    except (KeyError, ConfigError) as exc:
        raise CliError(f"checkpoint lacks a usable experiment config: {exc}", EXIT_COMPAT) from exc
    if args.disable_level is not None and args.disable_level > model.n_levels:
        raise CliError(f"--disable-level must be in [1, {model.n_levels}]", EXIT_CONFIG)
    mesh = _load_input_mesh(args.mesh)
    try:
        task = prepare_task(cfg, mesh)
    except ConfigError as exc:
        raise CliError(f"mesh incompatible with checkpoint: {exc}", EXIT_COMPAT) from exc
    if cfg.task != "normals_generalization" and task.mesh.content_hash() != extra.get("mesh_hash"):
        raise CliError("mesh differs from the checkpoint's training mesh", EXIT_COMPAT)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    disabled = (args.disable_level,) if args.disable_level else ()
    try:
        pred, loss, err = evaluate(model, task, disabled)
    except MeshFieldError as exc:
        raise CliError(f"evaluation failed: {exc}", EXIT_NUMERIC) from exc
    outputs = [out / "prediction.csv", out / "vertex_errors.csv", out / "errors.ply", out / "eval.json"]
    export.write_field_csv(outputs[0], pred)
    export.write_vertex_errors(outputs[1], err)
    export.write_error_ply(outputs[2], task.mesh, err, cfg.error_clip)
    export.write_json(outputs[3], {"loss": loss, "disabled_levels": list(disabled), "task": cfg.task, "n_vertices": task.mesh.n_vertices})
    export.write_manifest(out, "eval", {"checkpoint": str(args.checkpoint), "disable_level": args.disable_level}, model.seed,
                          [args.checkpoint, args.mesh], outputs, {})
    print(f"loss {loss:.12e} -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"spec file not found: {args.spec}", EXIT_CONFIG) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"cannot parse spec: {exc}", EXIT_CONFIG) from exc
    thresholds = spec.get("thresholds", [])
    groups = spec.get("groups", [])
    # short form: a bare source name per group
    groups = [{"source": "constant"} if g == "const" else ({"source": g} if isinstance(g, str) else g) for g in groups]
    if not isinstance(thresholds, list) or not all(isinstance(g, dict) for g in groups):
        raise CliError("spec needs a 'thresholds' list and a list of group objects", EXIT_CONFIG)
    eig_needed = max([g.get("index", 0) for g in groups if g.get("source") == "eigenfunction"] or [0])
    k_eig = int(spec.get("k_eig", max(eig_needed, 1)))
    try:
        validate_groups(thresholds, groups, k_eig)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    mesh = _load_input_mesh(args.mesh)
    norm = normalize_mesh(mesh)
    basis = None
    if eig_needed:
        if k_eig > norm.n_vertices:
            raise CliError(f"k_eig={k_eig} exceeds the mesh's {norm.n_vertices} vertices", EXIT_CONFIG)
        basis = cached_eigs(norm, assemble_laplacian(norm), k_eig)
    all_constant = all(g["source"] == "constant" for g in groups)
    try:
        rgb, _ = synthesize_rgb(norm, basis, thresholds, groups, on_constant="raise" if all_constant else "uniform")
    except ConstantField as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export.write_field_csv(out, rgb.values)
    save_mesh(mesh, out.with_suffix(".ply"), colors=export.field_colors(rgb.values))
    print(f"wrote {out} and {out.with_suffix('.ply')}")
    return EXIT_OK


def cmd_subdivide(args) -> int:
    if not args.threshold > 0 or args.iterations < 1:
        raise CliError("--threshold must be > 0 and --iterations >= 1", EXIT_CONFIG)
    mesh = normalize_mesh(_load_input_mesh(args.mesh))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs, counts = [], []
    for k in range(1, args.iterations + 1):
        mesh = normalize_mesh(subdivide_threshold(mesh, args.threshold))
        p = out / f"level_{k}.obj"
        save_mesh(mesh, p)
        outputs.append(p)
        counts.append({"level": k, "vertices": mesh.n_vertices, "faces": mesh.n_faces})
    cfg = {"threshold": args.threshold, "iterations": args.iterations, "counts": counts}
    export.write_manifest(out, "subdivide", cfg, None, [args.mesh], outputs, {})
    for c in counts:
        print(f"level {c['level']}: {c['vertices']} vertices, {c['faces']} faces")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshfield", description="Multi-resolution neural fields on triangle meshes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--baseline", choices=["n_level", "one_level", "plain_diffusionnet"])
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a mesh")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--disable-level", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic hue-patchwork RGB field")
    p.add_argument("--mesh", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("subdivide", help="write thresholded midpoint subdivisions of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_subdivide)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
