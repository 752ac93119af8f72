"""Command-line entry point: synthesis, filtering, evaluation, checks, serving.

Every subcommand is deterministic given its flags and seeds, never mutates
input images, and writes an effective-config snapshot next to its outputs.
Progress goes to standard error; data goes to standard output. Exit codes:
0 success, 1 pipeline failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import btrank, kernels, metrics, review, synth

log = logging.getLogger("harmonytk")

ROOT_ENV = "HARMONYTK_ROOT"


def load_config_file(path) -> dict[str, str]:
    """Parse a line-based key=value config file; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _setting(args, file_cfg: dict, key: str, cast, default):
    """Flag wins over config file wins over default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return cast(file_cfg[key])
    return default


def _synth_config(args) -> synth.SynthConfig:
    file_cfg = load_config_file(args.config) if args.config else {}
    return synth.SynthConfig(
        composites_per_target=_setting(args, file_cfg,
                                       "composites_per_target", int, 4),
        method_plan=_setting(args, file_cfg, "method_plan", str, "cycle"),
        hue_threshold_deg=_setting(args, file_cfg, "hue_threshold_deg",
                                   float, synth.HUE_THRESHOLD_DEG),
        clip_threshold=_setting(args, file_cfg, "clip_threshold", float,
                                synth.CLIP_THRESHOLD),
        split_fraction=_setting(args, file_cfg, "split_fraction", float, 0.8),
        seed=_setting(args, file_cfg, "seed", int, 0),
        workers=_setting(args, file_cfg, "workers", int, 1),
    )


def cmd_synth(args) -> int:
    config = _synth_config(args)
    sources = synth.load_sources(args.sources)
    log.info("loaded %d sources from %s", len(sources), args.sources)
    manifest, rejected = synth.synthesize_dataset(sources, args.out, config)
    sides = list(manifest.split.values())
    print(json.dumps({
        "manifest": str(Path(args.out) / "manifest.jsonl"),
        "accepted": len(manifest.records),
        "rejected": len(rejected),
        "train": sides.count(synth.TRAIN),
        "test": sides.count(synth.TEST),
    }, sort_keys=True))
    return 0


def cmd_filter(args) -> int:
    config = _synth_config(args)
    root = Path(args.root)
    manifest = synth.Manifest.read(args.manifest)
    rows = []
    n_fail = 0
    for rec in manifest.records:
        resolved = synth.CompositeRecord(
            record_id=rec.record_id,
            composite_path=str(root / rec.composite_path),
            real_path=str(root / rec.real_path),
            mask_path=str(root / rec.mask_path),
            method=rec.method, reference_id=rec.reference_id, seed=rec.seed)
        rec.filter_verdicts = synth.heuristic_filter(resolved, config)
        if not rec.passed_filters():
            n_fail += 1
        row = rec.to_row()
        row["split"] = manifest.split.get(rec.record_id, synth.TRAIN)
        rows.append(row)
    log.info("screened %d records, %d failing", len(rows), n_fail)
    lines = [json.dumps(row, sort_keys=True) for row in rows]
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        snap = out.with_name("filter_config.json")
        snap.write_text(json.dumps(config.snapshot(), indent=2,
                                   sort_keys=True) + "\n", encoding="utf-8")
        print(str(out))
    else:
        for line in lines:
            print(line)
    return 0


def cmd_eval(args) -> int:
    records = []
    with open(args.manifest, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if args.split != "all":
        records = [r for r in records if r.get("split") == args.split]
    report = metrics.evaluate_set(records, candidate_dir=args.candidates,
                                  root=args.root)
    print(metrics.format_table(report))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        metrics.write_report(report, out)
        snap = {
            "manifest": str(args.manifest),
            "candidates": str(args.candidates) if args.candidates else None,
            "root": str(args.root) if args.root else None,
            "split": args.split,
            "bucket_edges": list(metrics.BUCKET_EDGES),
        }
        (out / "eval_config.json").write_text(
            json.dumps(snap, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        log.info("report written to %s", out)
    return 0


def cmd_kernels_check(args) -> int:
    result = kernels.kernels_check(seed=args.seed)
    for name, ok in sorted(result["checks"].items()):
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    worst = max(result["grad_errors"].values())
    for op, err in sorted(result["grad_errors"].items()):
        print(f"grad:{op}: {err:.3e}")
    print(f"max finite-difference error: {worst:.3e}")
    print(f"RESULT: {'pass' if result['passed'] else 'FAIL'}")
    return 0 if result["passed"] else 1


def cmd_bt_fit(args) -> int:
    rows = btrank.read_results_file(args.results)
    matrix = btrank.matrix_from_results(rows)
    scores = btrank.fit_bradley_terry(matrix, max_iters=args.max_iters,
                                      tol=args.tol)
    print(btrank.format_ranking(scores))
    if args.out:
        btrank.write_scores(scores, args.out)
        log.info("scores written to %s", args.out)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    app = review.create_app(args.state, args.dataset,
                            manifest_path=args.manifest, seed=args.seed,
                            frontend_dir=args.frontend)
    log.info("serving on %s:%d", args.host, args.port)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harmonytk",
        description="composite synthesis, screening, evaluation, and review")
    sub = parser.add_subparsers(dest="command", required=True)
    default_root = os.environ.get(ROOT_ENV)

    p = sub.add_parser("synth", help="generate a composite dataset")
    p.add_argument("--sources", required=True,
                   help="source directory (sources.jsonl or image/+mask/)")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--composites-per-target", type=int,
                   dest="composites_per_target")
    p.add_argument("--method-plan", choices=("cycle", "random"),
                   dest="method_plan")
    p.add_argument("--split-fraction", type=float, dest="split_fraction")
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("filter", help="re-screen an existing manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", default=default_root, required=default_root is None)
    p.add_argument("--out", help="write updated manifest here (default stdout)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--hue-threshold-deg", type=float, dest="hue_threshold_deg")
    p.add_argument("--clip-threshold", type=float, dest="clip_threshold")
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("eval", help="score candidates against real images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--candidates", help="directory of <record_id>.png candidates")
    p.add_argument("--root", default=default_root,
                   help="dataset root for manifest-relative paths")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--out", help="directory for the full report")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("kernels-check",
                       help="run model-kernel invariant and gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_kernels_check)

    p = sub.add_parser("bt-fit", help="fit pairwise-preference scores")
    p.add_argument("--results", required=True,
                   help="JSONL of {method_a, method_b, winner}")
    p.add_argument("--out", help="write scores JSON here")
    p.add_argument("--max-iters", type=int, default=1000, dest="max_iters")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(fn=cmd_bt_fit)

    p = sub.add_parser("serve", help="start the review service")
    p.add_argument("--state", required=True, help="event-log directory")
    p.add_argument("--dataset", default=default_root,
                   required=default_root is None, help="dataset root")
    p.add_argument("--manifest", help="manifest to enqueue on startup")
    p.add_argument("--frontend", help="static UI directory to mount")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
