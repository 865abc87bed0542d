"""Command-line harness: synthesis, registration, evaluation, debugging.

Commands share ``--seed``, ``--threads`` and ``--config``. Thread count
never changes numerical output: every pair's work depends only on its
inputs and a seed derived from (run seed, pair index), and files are
written by the main thread in index order. Wall-clock timings live only
in ``run.json``, so all other outputs are byte-reproducible.

Exit codes: 0 success (for ``register``: at least one pair succeeded),
1 operation failure, 2 bad arguments.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import correlation, dataset, estimator, geometry, imaging, metrics
from .errors import IrvregError

TARGET_CHOICES = ("ir", "aligned", "inverted")


class BadUsage(Exception):
    """Raised for argument problems found after parsing."""


def _utc_now():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _write_text_atomic(path, text):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _write_json_atomic(path, payload):
    _write_text_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_config(args):
    data = {}
    if args.config is not None:
        if not os.path.exists(args.config):
            raise BadUsage(f"config file not found: {args.config}")
        try:
            with open(args.config, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise BadUsage(f"config file is not valid JSON: {exc}") from exc
    try:
        cfg = estimator.EstimatorConfig.from_dict(data)
    except (ValueError, IrvregError) as exc:
        raise BadUsage(f"bad config: {exc}") from exc
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _pair_seed(run_seed, index):
    return int(np.random.default_rng([run_seed, index]).integers(1 << 31))


def _identity_result():
    zeros = np.zeros((4, 2))
    return estimator.RegistrationResult(
        delta3=zeros, delta2=zeros, delta1=zeros,
        h_full=geometry.identity(), levels=(),
    )


def _target_image(record, suite_dir, mode):
    if mode == "ir":
        return imaging.load_image(os.path.join(suite_dir, record["ir"]))
    aligned = imaging.load_image(
        os.path.join(suite_dir, record["vis_aligned"])
    )
    if mode == "inverted":
        return imaging.invert_intensity(aligned)
    return aligned


def _register_one(index, record, suite_dir, mode, cfg, run_seed, identity):
    src = imaging.load_image(
        os.path.join(suite_dir, record["vis_distorted"])
    )
    tgt = _target_image(record, suite_dir, mode)
    started = time.perf_counter()
    if identity:
        result = _identity_result()
    else:
        pair_cfg = replace(cfg, seed=_pair_seed(run_seed, index))
        result = estimator.register_hierarchical(src, tgt, cfg=pair_cfg)
    elapsed = time.perf_counter() - started
    warped, _ = imaging.warp(src, result.h_full)
    payload = {
        "id": record["id"],
        "target": mode,
        "h_full": geometry.homography_to_list(result.h_full),
        "delta1": geometry.offsets_to_list(result.delta1),
        "delta2": geometry.offsets_to_list(result.delta2),
        "delta3": geometry.offsets_to_list(result.delta3),
        "degraded": bool(result.degraded),
    }
    if "offsets" in record:
        gt = np.asarray(record["offsets"], dtype=np.float64)
        payload["ace"] = geometry.average_corner_error(result.delta1, gt)
        payload["offset_errors"] = {
            "delta1": metrics.offset_error(result.delta1, gt),
            "delta2": metrics.offset_error(result.delta2, gt),
            "delta3": metrics.offset_error(result.delta3, gt),
        }
    return payload, warped, elapsed


def cmd_synth(args):
    if args.count < 0:
        raise BadUsage("--count must be >= 0")
    if args.rho < 0:
        raise BadUsage("--rho must be >= 0")
    if not os.path.isdir(args.src):
        raise BadUsage(f"source directory not found: {args.src}")
    log_lines = []
    manifest = dataset.synthesize_set(
        args.src, args.out, size=args.size, rho=args.rho,
        count=args.count, seed=args.seed if args.seed is not None else 0,
        name=args.name, log=log_lines.append,
    )
    summary = dataset.format_summary(manifest)
    for line in log_lines:  # skip notes to stderr, summary once to stdout
        if line != summary:
            print(line, file=sys.stderr)
    print(summary)
    _write_json_atomic(os.path.join(args.out, "run.json"), {
        "command": "synth",
        "timestamp": _utc_now(),
        "options": {"src": str(args.src), "size": args.size,
                    "rho": args.rho, "count": args.count,
                    "name": manifest.name},
        "seed": manifest.seed,
        "summary": {"records": len(manifest.records),
                    "skipped": manifest.skipped},
    })
    return 0


def _suite_records(args):
    if args.pair is not None:
        src_path, tgt_path = args.pair
        for path in (src_path, tgt_path):
            if not os.path.exists(path):
                raise BadUsage(f"pair image not found: {path}")
        record = {"id": "000000",
                  "vis_distorted": os.path.abspath(src_path),
                  "vis_aligned": os.path.abspath(tgt_path),
                  "ir": os.path.abspath(tgt_path)}
        return "/", [record]
    if args.suite is None:
        raise BadUsage("either --suite or --pair is required")
    try:
        manifest = dataset.load_manifest(args.suite)
    except (OSError, ValueError, KeyError) as exc:
        raise BadUsage(f"cannot load suite manifest: {exc}") from exc
    return str(args.suite), list(manifest.records)


def cmd_register(args):
    cfg = _load_config(args)
    run_seed = args.seed if args.seed is not None else cfg.seed
    suite_dir, records = _suite_records(args)
    if not records:
        print("suite has no records", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    results_dir = os.path.join(args.out, "results")
    warped_dir = os.path.join(args.out, "warped")
    os.makedirs(results_dir, exist_ok=True)
    os.makedirs(warped_dir, exist_ok=True)

    def work(item):
        index, record = item
        try:
            return index, _register_one(
                index, record, suite_dir, args.target, cfg, run_seed,
                args.identity,
            ), None
        except (IrvregError, ValueError, OSError) as exc:
            return index, None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        outcomes = list(pool.map(work, enumerate(records)))

    pair_meta = []
    aces = []
    times = []
    n_ok = 0
    for index, outcome, error in outcomes:
        record = records[index]
        if outcome is None:
            print(f"pair {record['id']}: {error}", file=sys.stderr)
            pair_meta.append({"id": record["id"], "ok": False,
                              "error": error})
            continue
        payload, warped, elapsed = outcome
        _write_json_atomic(
            os.path.join(results_dir, f"{record['id']}.json"), payload
        )
        imaging.save_image(
            os.path.join(warped_dir, f"{record['id']}.png"), warped
        )
        pair_meta.append({"id": record["id"], "ok": True,
                          "time_s": elapsed})
        times.append(elapsed)
        if "ace" in payload:
            aces.append(payload["ace"])
        n_ok += 1

    summary = {"count": len(records), "ok": n_ok,
               "failed": len(records) - n_ok}
    if times:
        summary["mean_time_s"] = float(np.mean(times))
    if aces:
        summary["median_ace"] = float(np.median(aces))
        summary["mean_ace"] = float(np.mean(aces))
    _write_json_atomic(os.path.join(args.out, "run.json"), {
        "command": "register",
        "timestamp": _utc_now(),
        "config": cfg.to_dict(),
        "options": {"suite": suite_dir, "target": args.target,
                    "identity": args.identity, "threads": args.threads},
        "seed": run_seed,
        "pairs": pair_meta,
        "summary": summary,
    })
    if aces:
        print(f"registered {n_ok}/{len(records)} pairs, "
              f"median ACE {np.median(aces):.3f} px")
    else:
        print(f"registered {n_ok}/{len(records)} pairs")
    return 0 if n_ok else 1


def cmd_eval(args):
    try:
        manifest = dataset.load_manifest(args.suite)
        with open(os.path.join(args.run, "run.json"), "r",
                  encoding="utf-8") as handle:
            run_record = json.load(handle)
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot read inputs: {exc}", file=sys.stderr)
        return 1
    mode = run_record.get("options", {}).get("target", "aligned")
    rows = []
    reports = []
    for record in manifest.records:
        result_path = os.path.join(args.run, "results",
                                   f"{record['id']}.json")
        warped_path = os.path.join(args.run, "warped",
                                   f"{record['id']}.png")
        if not os.path.exists(result_path):
            continue
        try:
            with open(result_path, "r", encoding="utf-8") as handle:
                result = json.load(handle)
            warped = imaging.load_image(warped_path)
            truth = _target_image(record, str(args.suite), mode)
        except (OSError, ValueError) as exc:
            print(f"pair {record['id']}: {exc}", file=sys.stderr)
            return 1
        h_full = geometry.homography_from_list(result["h_full"])
        mask = imaging.warp_mask(warped.shape[:2], h_full)
        try:
            report = metrics.evaluate_pair(warped, truth, mask)
        except IrvregError as exc:
            print(f"pair {record['id']}: skipped "
                  f"({type(exc).__name__}: {exc})", file=sys.stderr)
            continue
        report = replace(report, ace=result.get("ace"),
                         offset_errors=result.get("offset_errors"))
        reports.append((record["id"], report))
        rows.append({
            "id": record["id"], "rmse": report.rmse, "ncc": report.ncc,
            "mi": report.mi, "ssim": report.ssim,
            "ace": report.ace if report.ace is not None else "",
        })
    if not rows:
        print("no evaluable pairs found", file=sys.stderr)
        return 1

    fields = ("id", "rmse", "ncc", "mi", "ssim", "ace")
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    mean_row = {"id": "mean"}
    for key in ("rmse", "ncc", "mi", "ssim"):
        mean_row[key] = float(np.mean([r[key] for r in rows]))
    ace_values = [r["ace"] for r in rows if r["ace"] != ""]
    mean_row["ace"] = float(np.mean(ace_values)) if ace_values else ""
    writer.writerow(mean_row)
    out_dir = args.out if args.out is not None else args.run
    os.makedirs(out_dir, exist_ok=True)
    _write_text_atomic(os.path.join(out_dir, "results.csv"),
                       buffer.getvalue())

    mean_report = metrics.MetricReport(
        rmse=mean_row["rmse"], ncc=mean_row["ncc"], mi=mean_row["mi"],
        ssim=mean_row["ssim"],
        ace=mean_row["ace"] if ace_values else None,
    )
    print(metrics.report_table(reports + [("mean", mean_report)]))
    mean_time = run_record.get("summary", {}).get("mean_time_s")
    if mean_time is not None:
        print(f"mean per-pair time: {mean_time:.3f} s")
    return 0


def cmd_debug_corr(args):
    cfg = _load_config(args)
    if not 1 <= args.level <= cfg.levels:
        raise BadUsage(f"--level must be in 1..{cfg.levels}")
    if not 1 <= args.round <= cfg.rounds:
        raise BadUsage(f"--round must be in 1..{cfg.rounds}")
    src_path, tgt_path = args.pair
    for path in (src_path, tgt_path):
        if not os.path.exists(path):
            raise BadUsage(f"pair image not found: {path}")
    src = imaging.load_image(src_path)
    tgt = imaging.load_image(tgt_path)
    os.makedirs(args.out, exist_ok=True)
    captured = []

    def capture(rec):
        if rec["level"] == args.level and rec["round"] == args.round - 1:
            captured.append(rec)

    estimator.register_hierarchical(src, tgt, cfg=cfg, capture=capture)
    for rec in captured:
        stem = f"L{rec['level']}_r{args.round}_{rec['stage']}"
        correlation.dump_volume(
            rec["volume"], os.path.join(args.out, stem + "_volume")
        )
        correlation.dump_shift_field(
            rec["field"], os.path.join(args.out, stem + "_field")
        )
    print(f"dumped {len(captured)} stages to {args.out}")
    return 0


def _build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides config seed)")
    shared.add_argument("--threads", type=int, default=1,
                        help="worker threads; never changes results")
    shared.add_argument("--config", default=None,
                        help="estimator config JSON file")

    parser = argparse.ArgumentParser(
        prog="irvreg",
        description="infrared/visible registration harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", parents=[shared],
                             help="generate a misaligned benchmark set")
    p_synth.add_argument("--src", required=True,
                         help="directory of *_ir/*_vis source pairs")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--size", type=int, default=dataset.DEFAULT_SIZE)
    p_synth.add_argument("--rho", type=float, default=dataset.DEFAULT_RHO)
    p_synth.add_argument("--count", type=int, default=50)
    p_synth.add_argument("--name", default=None)
    p_synth.set_defaults(func=cmd_synth)

    p_reg = sub.add_parser("register", parents=[shared],
                           help="register pairs from a suite or files")
    p_reg.add_argument("--suite", default=None,
                       help="directory holding manifest.json")
    p_reg.add_argument("--pair", nargs=2, metavar=("SRC", "TGT"),
                       default=None, help="register one explicit pair")
    p_reg.add_argument("--out", required=True)
    p_reg.add_argument("--target", choices=TARGET_CHOICES,
                       default="aligned",
                       help="what each distorted image registers against")
    p_reg.add_argument("--identity", action="store_true",
                       help="emit identity estimates as a baseline")
    p_reg.set_defaults(func=cmd_register)

    p_eval = sub.add_parser("eval", parents=[shared],
                            help="score a registration run against truth")
    p_eval.add_argument("--suite", required=True)
    p_eval.add_argument("--run", required=True,
                        help="directory produced by register")
    p_eval.add_argument("--out", default=None,
                        help="where results.csv goes (default: run dir)")
    p_eval.set_defaults(func=cmd_eval)

    p_dbg = sub.add_parser("debug-corr", parents=[shared],
                           help="dump correlation volumes and shift fields")
    p_dbg.add_argument("--pair", nargs=2, metavar=("SRC", "TGT"),
                       required=True)
    p_dbg.add_argument("--level", type=int, required=True,
                       help="pyramid level, 3 = coarsest")
    p_dbg.add_argument("--round", type=int, default=1,
                       help="refinement round, 1-based")
    p_dbg.add_argument("--out", required=True)
    p_dbg.set_defaults(func=cmd_debug_corr)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.func(args)
    except BadUsage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IrvregError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
