"""Command line: ``meshwss {generate,train,predict,eval,export}``."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from meshwss.dataset import generate_dataset, load_dataset
from meshwss.estimator import WSSRegressor
from meshwss.exceptions import MeshWSSError
from meshwss.io import (config_hash, load_tagged_mesh, read_field, sha256_file, write_field, write_json,
                        write_ply)
from meshwss.mesh import INLET, OUTLET, BoundaryLoop, find_boundary_loops
from meshwss.metrics import format_table, rotated_evaluation, suite_metrics
from meshwss.synth import BIFURCATING, SINGLE


def _widths(text):
    return tuple(int(w) for w in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshwss", description="Wall-shear-stress regression on artery meshes.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesise a dataset")
    g.add_argument("--kind", choices=(SINGLE, BIFURCATING), required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--edge-length", type=float, default=None, help="target edge length in mm")

    t = sub.add_parser("train", help="train a network on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--arch", choices=("sage", "feast", "gem"), default="gem")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--widths", type=_widths, default=None)
    t.add_argument("--blocks", type=int, default=1)
    t.add_argument("--max-order", type=int, default=2)
    t.add_argument("--heads", type=int, default=1)
    t.add_argument("--precision", choices=("float32", "float64"), default="float32")
    t.add_argument("--schedule", choices=("none", "cosine"), default="none")
    t.add_argument("--accumulate", type=int, default=1)

    p = sub.add_parser("predict", help="predict the WSS field of one mesh")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True, help="OBJ file")
    p.add_argument("--loops", default=None, help="boundary-loop tag sidecar (JSON)")
    p.add_argument("--inlet-loop", type=int, default=None,
                   help="tag boundary loop K (in detection order) as inlet and the others as outlets")
    p.add_argument("--out", required=True, help="output field file (little-endian float32 triplets)")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--rotations", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--componentwise", action="store_true")
    e.add_argument("--out", required=True, help="report directory")

    x = sub.add_parser("export", help="write a PLY file with the field as vertex properties")
    x.add_argument("--mesh", required=True)
    x.add_argument("--field", required=True)
    x.add_argument("--out", required=True)
    return parser


def cmd_generate(args) -> int:
    manifest = generate_dataset(args.kind, args.count, args.seed, args.out, args.edge_length)
    counts = {s: sum(e["split"] == s for e in manifest["samples"]) for s in ("train", "val", "test")}
    print(f"wrote {args.count} {args.kind} samples to {args.out} "
          f"(edge length {manifest['edge_length']} mm, split {counts})")
    return 0


def _split(samples, name):
    return [s for s in samples if s.split == name]


def cmd_train(args) -> int:
    manifest, samples = load_dataset(args.data)
    train, val = _split(samples, "train"), _split(samples, "val")
    est = WSSRegressor(arch=args.arch, widths=args.widths, blocks_per_scale=args.blocks, max_order=args.max_order,
                       heads=args.heads, epochs=args.epochs, learning_rate=args.lr, random_state=args.seed,
                       precision=args.precision, schedule=None if args.schedule == "none" else args.schedule,
                       accumulate=args.accumulate)
    start = time.perf_counter()
    est.fit([s.mesh for s in train], [s.target for s in train],
            [s.mesh for s in val] or None, [s.target for s in val] or None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est.save(out / "model.ckpt")
    lines = ["epoch | train-loss | val-NMAE [%]"]
    lines += [f"{e} | {loss:.6e} | {nmae:.4f}" for e, loss, nmae, _ in est.history_]
    (out / "history.txt").write_text("\n".join(lines) + "\n")
    params = est.get_params()
    params["ratios"] = list(params["ratios"])
    params["widths"] = None if params["widths"] is None else list(params["widths"])
    write_json(out / "run.json", {"seed": args.seed, "estimator": params,
                                  "config_hash": config_hash(params),
                                  "dataset_hash": sha256_file(Path(args.data) / "manifest.json"),
                                  "dataset_kind": manifest["kind"], "best_epoch": est.best_epoch_,
                                  "n_parameters": est.n_parameters_})
    print(f"trained {args.arch} ({est.n_parameters_} parameters) for {args.epochs} epochs "
          f"in {time.perf_counter() - start:.1f} s; best epoch {est.best_epoch_}")
    return 0


def _tag_loops(mesh, inlet_index):
    loops = find_boundary_loops(mesh.triangles)
    if not 0 <= inlet_index < len(loops):
        raise MeshWSSError(f"--inlet-loop {inlet_index} out of range: mesh has {len(loops)} boundary loops")
    return mesh.with_loops(BoundaryLoop(tuple(lp), INLET if k == inlet_index else OUTLET)
                           for k, lp in enumerate(loops))


def cmd_predict(args) -> int:
    start = time.perf_counter()
    est = WSSRegressor.load(args.checkpoint)
    mesh = load_tagged_mesh(args.mesh, args.loops)
    if args.inlet_loop is not None:
        mesh = _tag_loops(mesh, args.inlet_loop)
    if not mesh.loops_tagged(INLET):
        raise MeshWSSError("mesh has no inlet: tag one boundary loop as inlet with a --loops sidecar "
                           "or pick it with --inlet-loop K")
    pred = est.predict(mesh)
    write_field(args.out, pred)
    print(f"predicted {mesh.n_vertices} vertices in {time.perf_counter() - start:.3f} s wall clock")
    return 0


def cmd_eval(args) -> int:
    est = WSSRegressor.load(args.checkpoint)
    header = est.checkpoint_header_
    if config_hash({k: header[k] for k in ("unet", "feature_layout")}) != header["config_hash"]:
        raise MeshWSSError("checkpoint feature layout does not match its recorded hash")
    _, samples = load_dataset(args.data)
    chosen = _split(samples, args.split)
    if not chosen:
        raise MeshWSSError(f"split {args.split!r} is empty")
    targets = [s.target for s in chosen]
    preds = est.predict([s.mesh for s in chosen])
    rows = {"original": suite_metrics(preds, targets, args.componentwise)}
    report = {"checkpoint_config_hash": header["config_hash"], "split": args.split,
              "original": rows["original"].to_dict()}
    if args.rotations > 0:
        rot = rotated_evaluation(est.predict, [s.mesh for s in chosen], targets, args.rotations, args.seed,
                                 componentwise=args.componentwise)
        rows["rotated"] = rot.rotated
        report["rotated"] = rot.rotated.to_dict()
        report["ratio"] = rot.ratio
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = format_table(rows)
    (out / "metrics.txt").write_text(table)
    write_json(out / "metrics.json", report)
    sys.stdout.write(table)
    return 0


def cmd_export(args) -> int:
    mesh = load_tagged_mesh(args.mesh)
    field = read_field(args.field, 3)
    if len(field) != mesh.n_vertices:
        raise MeshWSSError(f"field has {len(field)} vectors but the mesh has {mesh.n_vertices} vertices")
    write_ply(args.out, mesh, field)
    print(f"wrote {args.out}")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
            "export": cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (MeshWSSError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
