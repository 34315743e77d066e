"""Command-line entry point: ``poseverify <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .dataset import DatasetError, load_dataset, save_dataset
from .evaluation import DEFAULT_THRESHOLDS, compare_with_oracle, fmt6, parse_thresholds
from .formats import (FormatError, read_candidate_file, read_pose_file, write_candidate_file, write_pfm,
                      write_pgm, write_pose_file, write_ppm)
from .geometry import pose_error
from .rendering import invalid_pixel_ratio, render_view
from .scan_graph import ScanGraph, build_graph
from .semantics import ClassTableError
from .synth import SceneConfig, SceneError, gen_candidates, gen_scene
from .verification import (METHODS, Candidate, QueryBundle, SceneDatabase, VerifyConfig, canonical_method,
                           rank_candidates, render_candidate)

LOGGER = logging.getLogger("poseverify")

DATA_ERRORS = (DatasetError, FormatError, ClassTableError, SceneError, KeyError, ValueError, OSError)
DEFAULT_THRESHOLD_TEXT = ";".join(f"{t.max_pos_m:g},{t.max_rot_deg:g}" for t in DEFAULT_THRESHOLDS)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("POSEVERIFY_THREADS", "1")))
    except ValueError:
        return 1


def _write_run_json(out: Path, command: str, args: argparse.Namespace, extra: Optional[dict] = None) -> Path:
    """Echo the resolved configuration next to the outputs (``DIR/run.json`` or ``FILE.run.json``)."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}
    record = {"tool": "poseverify", "version": __version__, "command": command, "config": cfg,
              "threads": _threads()}
    if extra:
        record.update(extra)
    path = out / "run.json" if out.is_dir() else out.with_name(out.name + ".run.json")
    path.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_scene(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SceneConfig.from_dict(raw)
    ds = gen_scene(cfg)
    out = Path(args.out)
    save_dataset(ds, out)
    rows = []
    for q in ds.queries:
        for c in gen_candidates(ds, q.query_id, args.n_candidates, args.max_trans, args.max_rot,
                                seed=cfg.seed * 1000 + int(q.query_id.lstrip("q") or 0)):
            rows.append((q.query_id, c.candidate_id, c.source_db_image, c.pose))
    write_candidate_file(out / "candidates.txt", rows)
    _write_run_json(out, "gen-scene", args, {"scene": cfg.to_dict()})
    print(f"wrote {len(ds.scans)} scans, {len(ds.db_images)} database images, {len(ds.queries)} queries to {out}")
    return 0


def cmd_build_graph(args) -> int:
    ds = load_dataset(args.dataset)
    g = build_graph(ds.db_images, ds.scans, args.k, args.threshold, args.splat_radius)
    out = Path(args.out)
    g.save(out)
    _write_run_json(out, "build-graph", args)
    print(f"{len(g.edges)} edges over {len(g.images())} images")
    return 0


def cmd_render(args) -> int:
    ds = load_dataset(args.dataset)
    graph = ScanGraph.load(args.merged) if args.merged else None
    db = SceneDatabase.from_dataset(ds, graph)
    cloud = db.cloud_for(args.image, graph is not None)
    poses = read_pose_file(args.pose)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = {}
    for name, pose in sorted(poses.items()):
        r = render_view(cloud, pose, ds.intrinsics, args.splat_radius)
        write_ppm(out / f"{name}.ppm", r.color)
        write_pfm(out / f"{name}.pfm", r.depth)
        if r.label is not None:
            write_pgm(out / f"{name}.pgm", r.label)
        stats[name] = round(invalid_pixel_ratio(r), 6)
    _write_run_json(out, "render", args, {"invalid_pixel_ratio": stats})
    print(f"rendered {len(poses)} view(s) to {out}")
    return 0


def _method_list(values: Sequence[str]) -> List[str]:
    out = []
    for v in values:
        for part in v.split(","):
            if part.strip():
                out.append(canonical_method(part.strip()))
    return list(dict.fromkeys(out))


def _selection_path(out: Path, method: str) -> Path:
    return out.with_name(f"{out.stem}.{method.lower()}.poses.txt")


def cmd_score(args) -> int:
    ds = load_dataset(args.dataset)
    graph = ScanGraph.load(args.graph) if args.graph else None
    db = SceneDatabase.from_dataset(ds, graph)
    cfg = VerifyConfig(use_scan_graph=graph is not None, mask_variant=args.mask_variant, stride=args.stride,
                       patch=args.patch, splat_radius=args.splat_radius, class_table=ds.class_table)
    if "TrainPV" in args.methods:
        if not args.model:
            raise UsageError("trainpv needs --model")
        from .trainable import FeatureExtractor, ScoreRegressor, TrainPV
        cfg.trainpv = TrainPV(ScoreRegressor.load(args.model), FeatureExtractor(args.extractor, args.extractor_seed))

    rows = read_candidate_file(args.candidates)
    by_query: Dict[str, List[Candidate]] = {}
    for qid, cid, dbid, pose in rows:
        by_query.setdefault(qid, []).append(Candidate(cid, pose, dbid))
    wanted = args.query or sorted(by_query)
    for qid in wanted:
        if qid not in by_query:
            raise KeyError(f"no candidates for query {qid!r}")
    with_gt = all(ds.query(q).gt_pose is not None for q in wanted)

    header = "query_id,method,candidate_id,score,rank" + (",pos_err_m,rot_err_deg" if with_gt else "")
    lines = [header]
    selections: Dict[str, list] = {m: [] for m in args.methods}
    workers = _threads()
    for qid in wanted:
        q = ds.query(qid)
        bundle = QueryBundle.from_record(q)
        cands = by_query[qid]
        if any(m != "PSC" for m in args.methods):
            cands = [render_candidate(c, db, q.intrinsics, cfg.use_scan_graph, cfg.splat_radius) for c in cands]
        by_id = {c.candidate_id: c for c in cands}
        for m in args.methods:
            res = rank_candidates(bundle, cands, m, cfg, db, workers=workers)
            for rank, cid in enumerate(res.ranking, 1):
                s = res.scores[cid]
                row = [qid, m, cid, "" if s is None else fmt6(s), str(rank)]
                if with_gt:
                    e = pose_error(by_id[cid].pose, q.gt_pose)
                    row += [fmt6(e.position_m), fmt6(e.rotation_deg)]
                lines.append(",".join(row))
            selections[m].append((qid, by_id[res.best].pose))
    out = Path(args.out)
    out.write_text("\n".join(lines) + "\n")
    for m, sel in selections.items():
        write_pose_file(_selection_path(out, m), sel, comment=f"method={m}")
    _write_run_json(out, "score", args)
    print(f"scored {len(wanted)} queries with {', '.join(args.methods)} -> {out}")
    return 0


def cmd_train(args) -> int:
    from .trainable import (FeatureExtractor, ScoreRegressor, gen_training_from_candidates,
                            gen_training_random, mean_loss, prepare_group, train)

    ds = load_dataset(args.dataset)
    graph = ScanGraph.load(args.graph) if args.graph else None
    if args.groups:
        groups = gen_training_from_candidates(args.groups, ds, graph, args.splat_radius)
    else:
        scans = ds.scan_index()
        images = ds.image_index()
        groups = []
        for i, q in enumerate(ds.queries):
            if q.gt_pose is None:
                continue
            parent = images[ds.nearest_db_image(q.gt_pose)].parent_scan
            groups.append(gen_training_random(q.gt_pose, scans[parent], q.intrinsics, args.random_candidates,
                                              args.seed * 1000 + i, q.image, q.query_id))
    if not groups:
        raise ValueError("no usable training groups")
    extractor = FeatureExtractor(args.extractor, args.extractor_seed)
    prepared = [prepare_group(g, extractor) for g in groups]
    init = ScoreRegressor.init(args.seed)
    initial = mean_loss(init, prepared)
    result = train(prepared, args.epochs, args.lr, seed=args.seed, model=init, extractor=extractor)
    out = Path(args.out)
    result.model.save(out)
    log = ["epoch,mean_loss", f"0,{fmt6(initial)}"] + [f"{i},{fmt6(v)}" for i, v in enumerate(result.epoch_losses, 1)]
    out.with_name(out.name + ".log.csv").write_text("\n".join(log) + "\n")
    _write_run_json(out, "train", args, {"n_groups": len(groups), "lr": args.lr})
    print(f"trained on {len(groups)} groups; loss {initial:.4f} -> "
          f"{result.epoch_losses[-1] if result.epoch_losses else initial:.4f}")
    return 0


def _selection_method(path: Path) -> str:
    for line in path.read_text().splitlines():
        if line.startswith("# method="):
            return line.split("=", 1)[1].strip()
    return path.stem


def cmd_eval(args) -> int:
    thresholds = parse_thresholds(args.thresholds)
    gt = read_pose_file(args.gt)
    per_method = {}
    for p in args.selections:
        p = Path(p)
        name = _selection_method(p)
        if name in per_method:
            raise ValueError(f"two selection files for method {name}")
        per_method[name] = read_pose_file(p)
    report = compare_with_oracle(per_method, gt, thresholds, include_oracle=args.oracle)
    out = Path(args.out)
    out.write_text(report.to_csv())
    sys.stdout.write(report.to_table())
    _write_run_json(out, "eval", args)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _method_arg(text: str) -> str:
    try:
        return canonical_method(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poseverify", description="Rank candidate camera poses by rendering and comparing views.")
    p.add_argument("--version", action="version", version=f"poseverify {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("gen-scene", help="generate a synthetic dataset")
    g.add_argument("--config", help="scene config JSON (defaults for missing keys)")
    g.add_argument("--seed", type=int)
    g.add_argument("--n-candidates", type=int, default=10)
    g.add_argument("--max-trans", type=float, default=1.0)
    g.add_argument("--max-rot", type=float, default=20.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scene)

    b = sub.add_parser("build-graph", help="link database images to overlapping scans")
    b.add_argument("--dataset", required=True)
    b.add_argument("--k", type=int, default=10)
    b.add_argument("--threshold", type=float, default=0.10)
    b.add_argument("--splat-radius", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_graph)

    r = sub.add_parser("render", help="render views of a database image's scans")
    r.add_argument("--dataset", required=True)
    r.add_argument("--pose", required=True, help="pose file (name qw qx qy qz tx ty tz)")
    r.add_argument("--image", required=True, help="database image id selecting the scans")
    r.add_argument("--merged", help="scan graph JSON; merge all linked scans")
    r.add_argument("--splat-radius", type=int, default=1)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    s = sub.add_parser("score", help="score and rank candidate poses")
    s.add_argument("--dataset", required=True)
    s.add_argument("--query", action="append", help="query id (repeatable; default: all in the candidate file)")
    s.add_argument("--candidates", required=True)
    s.add_argument("--method", dest="methods", action="append", type=_method_arg, required=True,
                   metavar="{" + ",".join(m.lower() for m in METHODS) + "}")
    s.add_argument("--graph", help="scan graph JSON (render merged scans)")
    s.add_argument("--mask-variant", choices=("A", "B", "C"), default="C")
    s.add_argument("--stride", type=int, default=4)
    s.add_argument("--patch", type=int, default=16)
    s.add_argument("--splat-radius", type=int, default=1)
    s.add_argument("--model", help="TPV1 checkpoint for trainpv")
    s.add_argument("--extractor", choices=("conv", "rootsift"), default="conv")
    s.add_argument("--extractor-seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    t = sub.add_parser("train", help="train the learned scorer")
    t.add_argument("--dataset", required=True)
    t.add_argument("--groups", help="candidate file; omit to perturb ground-truth poses instead")
    t.add_argument("--random-candidates", type=int, default=10)
    t.add_argument("--graph")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--lr", type=float, default=1e-5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--extractor", choices=("conv", "rootsift"), default="conv")
    t.add_argument("--extractor-seed", type=int, default=0)
    t.add_argument("--splat-radius", type=int, default=1)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="localization rates at error thresholds")
    e.add_argument("--selections", nargs="+", required=True, help="selected-pose file(s), one per method")
    e.add_argument("--gt", required=True)
    e.add_argument("--thresholds", default=DEFAULT_THRESHOLD_TEXT)
    e.add_argument("--oracle", action="store_true", help="add the oracle row")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:      # --help / --version
        return int(exc.code or 0)
    if getattr(args, "methods", None):
        args.methods = list(dict.fromkeys(args.methods))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"poseverify: error: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"poseverify: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
