"""Command-line entry point: ``stepmetric <command> [options]``.

Exit codes: 0 success, 1 internal failure, 2 missing or invalid input
artifact (including configuration), 64 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import DOCS, Config, load_config
from .errors import CheckpointError, ConfigError, DatasetError, StepMetricError
from .losses import LOSS_MODES

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("stepmetric")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _UsageError(Exception):
    pass


# ---- argument helpers ----

def parse_script(text: str) -> list[tuple[int, int]]:
    """``"1x20,2x20"`` -> ``[(1, 20), (2, 20)]`` (step x frames)."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        step, sep, count = part.partition("x")
        if not sep or not step.isdigit() or not count.isdigit() or int(count) < 1:
            raise _UsageError(f"bad stream script item {part!r}; expected STEPxFRAMES, e.g. 3x20")
        out.append((int(step), int(count)))
    if not out:
        raise _UsageError("empty stream script")
    return out


def parse_bursts(text: str) -> list[tuple[int, int]]:
    """``"40:8,100:10"`` -> ``[(40, 8), (100, 10)]`` (first frame : length)."""
    out = []
    for part in filter(None, (p.strip() for p in (text or "").split(","))):
        first, sep, count = part.partition(":")
        if not sep or not first.isdigit() or not count.isdigit():
            raise _UsageError(f"bad occlusion burst {part!r}; expected FIRST:COUNT, e.g. 40:8")
        out.append((int(first), int(count)))
    return out


def _overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise _UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _resolve_config(args, **flags) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    cfg = cfg.with_overrides(**_overrides(args.set))
    return cfg.with_overrides(**flags)


def _run_artifacts(args):
    """Model and gallery paths from ``--run DIR`` or explicit ``--model``/``--gallery``."""
    model_path = Path(args.model) if args.model else (Path(args.run) / "model.atn" if args.run else None)
    gallery_path = Path(args.gallery) if args.gallery else (Path(args.run) / "gallery.npz" if args.run else None)
    if model_path is None or gallery_path is None:
        raise _UsageError("give --run DIR or both --model and --gallery")
    for what, path in (("checkpoint", model_path), ("gallery", gallery_path)):
        if not path.is_file():
            raise DatasetError(f"{what} {path} not found")
    from .embed import load_model
    from .gallery import Gallery

    return load_model(model_path), Gallery.load(gallery_path)


def _out_parent(args) -> Path:
    return Path(args.out) if args.out else Path("runs")


# ---- commands ----

def cmd_gen_data(args) -> int:
    from .data.synth import generate_dataset, scripted_stream
    from .stream import write_frames

    cfg = _resolve_config(args, steps=args.steps, per_step=args.per_step, size=args.size, data_seed=args.seed)
    root = Path(args.out) if args.out else Path(cfg.root)
    if root.exists() and not root.is_dir():
        raise DatasetError(f"dataset root {root} exists and is not a directory")
    if args.stream:
        script = parse_script(args.stream)
        bursts = parse_bursts(args.occlusions)
        frames, truth, occluded = scripted_stream(script, cfg.data_seed, cfg.steps, cfg.size, bursts)
        try:
            write_frames(root, frames)
            lines = ["frame_id,step,occluded"] + [f"{i},{t},{int(o)}" for i, (t, o) in enumerate(zip(truth, occluded))]
            (root / "truth.csv").write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise DatasetError(f"cannot write frames to {root}: {exc}") from exc
        print(f"wrote {len(frames)} frames ({sum(occluded)} occluded) to {root}")
        return EXIT_OK
    data = generate_dataset(root, cfg.data_seed, cfg.steps, cfg.per_step, cfg.size)
    print(f"wrote {len(data)} images in {len(data.steps)} step folders to {root}")
    return EXIT_OK


def _load_train_set(cfg: Config, data_arg):
    from .data.images import load_dataset

    root = Path(data_arg) if data_arg else Path(cfg.root)
    return load_dataset(root)


def cmd_train(args) -> int:
    from .embed import build_embedder, save_model, telemetry_csv, train
    from .gallery import build_gallery, embeddings_csv
    from .reports import plot_telemetry
    from .rundir import finish_run_dir, new_run_dir

    cfg = _resolve_config(args, loss_mode=args.loss, epochs=args.epochs, seed=args.seed)
    dataset = _load_train_set(cfg, args.data)
    run = new_run_dir(_out_parent(args), cfg.loss_mode, cfg.seed)
    print(f"run directory {run}")
    every = 1 if cfg.epochs <= 20 else 10

    def on_epoch(row):
        if row.epoch % every == 0 or row.epoch == cfg.epochs:
            dano = "" if row.mean_dano is None else f" d_ano={row.mean_dano:.4f}"
            print(f"epoch {row.epoch}/{cfg.epochs} d_p={row.mean_dp:.4f} d_n={row.mean_dn:.4f}{dano} "
                  f"loss={row.mean_loss:.5f} lambda={row.lam:g}", flush=True)

    model = build_embedder(cfg.embedder(), seed=cfg.seed)
    result = train(model, dataset, cfg.train(), on_epoch=on_epoch)
    (run / "telemetry.csv").write_text(telemetry_csv(result.telemetry))
    plot_telemetry(result.telemetry, run / "telemetry.png", f"{cfg.loss_mode}, seed {cfg.seed}")
    save_model(model, run / "model.atn", cfg.to_text())
    gallery = build_gallery(model, dataset, k=cfg.k, tau_rule=cfg.tau_rule)
    gallery.save(run / "gallery.npz")
    (run / "embeddings.csv").write_text(embeddings_csv(gallery.vectors, gallery.labels, gallery.source_ids))
    finish_run_dir(run, cfg.to_text(), cfg.seed, "train", {"loss_mode": cfg.loss_mode, "tau": gallery.tau})
    print(f"done: checkpoint {run / 'model.atn'}, gallery tau={gallery.tau:.4f}")
    return EXIT_OK


def cmd_build_gallery(args) -> int:
    from .embed import load_model
    from .gallery import build_gallery, embeddings_csv
    from .rundir import finish_run_dir, new_run_dir

    cfg = _resolve_config(args, k=args.k, tau_rule=args.tau, seed=args.seed)
    model_path = Path(args.model) if args.model else (Path(args.run) / "model.atn" if args.run else None)
    if model_path is None:
        raise _UsageError("give --run DIR or --model PATH")
    if not model_path.is_file():
        raise DatasetError(f"checkpoint {model_path} not found")
    model = load_model(model_path)
    dataset = _load_train_set(cfg, args.data)
    gallery = build_gallery(model, dataset, k=cfg.k, tau_rule=cfg.tau_rule)
    run = new_run_dir(_out_parent(args), "gallery", cfg.seed)
    gallery.save(run / "gallery.npz")
    (run / "embeddings.csv").write_text(embeddings_csv(gallery.vectors, gallery.labels, gallery.source_ids))
    finish_run_dir(run, cfg.to_text(), cfg.seed, "build-gallery",
                   {"model": model_path, "tau": gallery.tau, "nn_mean": gallery.nn_mean, "nn_std": gallery.nn_std})
    print(f"gallery of {len(gallery.labels)} points, k={gallery.k}, tau={gallery.tau:.4f} -> {run}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .embed import embed_batch
    from .experiments import held_out_splits
    from .gallery import classify_many, embeddings_csv, score
    from .reports import plot_confusion
    from .rundir import finish_run_dir, new_run_dir

    cfg = _resolve_config(args, test_root=args.test, seed=args.seed)
    model, gallery = _run_artifacts(args)
    clean, occluded = held_out_splits(cfg)
    run = new_run_dir(_out_parent(args), "eval", cfg.seed)
    lines = ["split,n,accuracy,accuracy_excluding_rejections,rejection_rate"]
    for name, split in (("clean", clean), ("occluded", occluded)):
        images = split.images
        vectors = embed_batch(model, np.stack([img.pixels for img in images]))
        result = score(classify_many(gallery, vectors), [img.step for img in images],
                       sorted(set(gallery.steps) | set(split.steps)))
        (run / f"confusion_{name}.csv").write_text(result.confusion_csv())
        plot_confusion(result, run / f"confusion_{name}.png", f"{name} split")
        (run / f"embeddings_{name}.csv").write_text(
            embeddings_csv(vectors, [img.step for img in images], [img.source_id for img in images]))
        lines.append(f"{name},{len(images)},{result.accuracy!r},{result.accuracy_accepted!r},{result.rejection_rate!r}")
        print(f"{name:9s} n={len(images):4d} accuracy={result.accuracy:.4f} "
              f"excluding rejections={result.accuracy_accepted:.4f} rejected={result.rejection_rate:.4f}")
    (run / "metrics.csv").write_text("\n".join(lines) + "\n")
    finish_run_dir(run, cfg.to_text(), cfg.seed, "eval", {"model_run": args.run or args.model})
    print(f"reports in {run}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .experiments import (REFERENCE_ACCURACY, REFERENCE_NOTE, compare, compare_csv, compare_table,
                              held_out_splits, summary_csv)
    from .reports import plot_compare, plot_telemetry
    from .rundir import finish_run_dir, new_run_dir

    cfg = _resolve_config(args, epochs=args.epochs, seed=args.seed, compare_seeds=args.seeds)
    if cfg.compare_seeds < 1:
        raise _UsageError("--seeds must be >= 1")
    modes = args.modes.split(",") if args.modes else list(LOSS_MODES)
    bad = [m for m in modes if m not in LOSS_MODES]
    if bad:
        raise _UsageError(f"unknown loss modes {bad}; choose from {', '.join(LOSS_MODES)}")
    train_set = _load_train_set(cfg, args.data)
    clean, occluded = held_out_splits(cfg)
    seeds = [cfg.seed + i for i in range(cfg.compare_seeds)]
    run = new_run_dir(_out_parent(args), "compare", cfg.seed)
    print(f"run directory {run}; {len(modes)} modes x seeds {seeds}")

    def on_cell(cell):
        plot_telemetry(cell.telemetry, run / "cells" / f"{cell.mode}-{cell.seed}" / "telemetry.png",
                       f"{cell.mode}, seed {cell.seed}")
        print(f"{cell.mode:17s} seed {cell.seed}: clean {cell.clean.accuracy:.4f}  occluded "
              f"{cell.occluded_accuracy:.4f} (strict {cell.occluded.accuracy:.4f}, "
              f"rejected {cell.occluded.rejection_rate:.3f})  {cell.seconds:.0f}s", flush=True)

    cells = compare(cfg, train_set, clean, occluded, seeds, modes, out_dir=run, on_cell=on_cell)
    (run / "compare.csv").write_text(compare_csv(cells))
    (run / "compare_summary.csv").write_text(summary_csv(cells))
    table = compare_table(cells)
    plot_compare(table, run / "compare.png")
    finish_run_dir(run, cfg.to_text(), cfg.seed, "compare", {"seeds": " ".join(map(str, seeds))})
    print(f"\n{'mode':17s} {'median clean':>12s} {'median occluded':>16s} {'reference':>10s}")
    for mode, row in table.items():
        print(f"{mode:17s} {np.median(row['clean']):12.4f} {np.median(row['occluded']):16.4f} "
              f"{REFERENCE_ACCURACY[mode]:10.3f}")
    print(f"reference column: {REFERENCE_NOTE}; occluded = accuracy excluding rejected frames")
    return EXIT_OK


def cmd_run(args) -> int:
    from .data.synth import scripted_stream
    from .reports import plot_timeline
    from .rundir import finish_run_dir, new_run_dir
    from .stream import FolderProvider, ScriptedProvider, run_stream

    cfg = _resolve_config(args, required_run=args.required_run, anomaly_mode=args.anomaly_mode,
                          fps=args.fps, seed=args.seed)
    if bool(args.frames) == bool(args.script):
        raise _UsageError("give exactly one of --frames DIR or --script STEPxFRAMES,...")
    model, gallery = _run_artifacts(args)
    truth = None
    if args.script:
        frames, truth, _ = scripted_stream(parse_script(args.script), cfg.test_seed, cfg.steps, cfg.size,
                                           parse_bursts(args.occlusions))
        provider = ScriptedProvider(frames, cfg.fps)
    else:
        provider = FolderProvider(args.frames, cfg.fps)
        truth_file = Path(args.frames) / "truth.csv"
        if truth_file.is_file():
            truth = [int(line.split(",")[1]) for line in truth_file.read_text().splitlines()[1:] if line]
    run = new_run_dir(_out_parent(args), "run", cfg.seed)

    def on_event(frame_id, timestamp, step):
        print(f"frame {frame_id} t={timestamp:.2f}s confirmed step {step}", flush=True)

    log_ = run_stream(model, gallery, provider, cfg.smoother(), on_event=on_event, out_dir=run)
    if truth is not None and len(truth) != len(log_.entries):
        truth = None
    plot_timeline(log_, run / "timeline.png", truth)
    finish_run_dir(run, cfg.to_text(), cfg.seed, "run", {"model_run": args.run or args.model})
    print(f"{len(log_.entries)} frames, {len(log_.events)} confirmations, {len(log_.skipped)} skipped -> {run}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .data.synth import render_dataset
    from .experiments import bench
    from .rundir import finish_run_dir, new_run_dir

    cfg = _resolve_config(args, bench_frames=args.frames, seed=args.seed)
    if cfg.bench_frames < 200:
        raise _UsageError("bench needs at least 200 frames")
    model, gallery = _run_artifacts(args)
    per_step = -(-cfg.bench_frames // cfg.steps)
    frames = [img.pixels for img in render_dataset(cfg.test_seed, cfg.steps, per_step, cfg.size).images]
    report = bench(model, gallery, frames[:cfg.bench_frames], seed=cfg.seed)
    run = new_run_dir(_out_parent(args), "bench", cfg.seed)
    (run / "timing.csv").write_text(report.csv())
    finish_run_dir(run, cfg.to_text(), cfg.seed, "bench", {"model_run": args.run or args.model})
    for metric, value, unit in report.rows():
        print(f"{metric:32s} {value:10.3f} {unit}")
    print(f"timing report -> {run / 'timing.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import TOLERANCE, run_suite

    if args.seeds < 1:
        raise _UsageError("--seeds must be >= 1")
    corrupt = (args.corrupt, 1.01) if args.corrupt else None
    results = run_suite(args.seeds, corrupt=corrupt)
    worst = {}
    for r in results:
        key = (r.check, r.param)
        if key not in worst or r.max_rel_error > worst[key].max_rel_error:
            worst[key] = r
    checked = {}
    for r in results:
        checked[(r.check, r.param)] = checked.get((r.check, r.param), 0) + r.checked
    failed = [r for r in results if not r.passed]
    lines = ["check,param,worst_seed,max_rel_error,coordinates_checked,passed"]
    for (check, param), r in worst.items():
        status = "ok" if r.passed else "FAIL"
        print(f"{status:4s} {check:27s} {param:16s} max rel err {r.max_rel_error:.2e} "
              f"(seed {r.seed}, {checked[(check, param)]} coords)")
        lines.append(f"{check},{param},{r.seed},{r.max_rel_error!r},{checked[(check, param)]},{int(r.passed)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.csv").write_text("\n".join(lines) + "\n")
    if failed:
        names = sorted({f"{r.check}/{r.param}" for r in failed})
        print(f"FAILED: {len(failed)} checks above {TOLERANCE:g} in {', '.join(names)}")
        return EXIT_INTERNAL
    print(f"all {len(results)} checks <= {TOLERANCE:g} over {args.seeds} seeds")
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = _resolve_config(args)
    text = cfg.to_text()
    if args.docs:
        text = "".join(f"{line:40s} # {DOCS[line.split(' = ')[0]]}\n" for line in text.splitlines())
    print(text, end="")
    return EXIT_OK


# ---- parser ----

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="training seed (data seed for gen-data)")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory (dataset root for gen-data, parent of run dirs otherwise)")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override any config key; repeatable")

    parser = _Parser(prog="stepmetric", parents=[common],
                     description="Assembly-step estimation with metric-learned embeddings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="render a synthetic step dataset or stream")
    p.add_argument("--steps", type=int)
    p.add_argument("--per-step", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--stream", metavar="SCRIPT", help="write a frame stream instead, e.g. 1x20,2x20")
    p.add_argument("--occlusions", metavar="BURSTS", help="occlusion bursts for --stream, e.g. 40:8,100:10")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train one embedder (new run directory)")
    p.add_argument("--data", help="dataset root (default: config root)")
    p.add_argument("--loss", choices=LOSS_MODES, help="loss mode")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build-gallery", parents=[common], help="embed a dataset into a k-NN gallery")
    p.add_argument("--run", help="train run directory holding model.atn")
    p.add_argument("--model", help="checkpoint path")
    p.add_argument("--data", help="dataset root (default: config root)")
    p.add_argument("--k", type=int)
    p.add_argument("--tau", help="rejection threshold or 'auto'")
    p.set_defaults(func=cmd_build_gallery)

    for name, func, helptext in (("eval", cmd_eval, "score a model on clean and occluded held-out splits"),
                                 ("run", cmd_run, "stream frames through embed -> classify -> smooth"),
                                 ("bench", cmd_bench, "time embedding and classification")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--run", help="run directory holding model.atn and gallery.npz")
        p.add_argument("--model", help="checkpoint path (overrides --run)")
        p.add_argument("--gallery", help="gallery path (overrides --run)")
        p.set_defaults(func=func)
        if name == "eval":
            p.add_argument("--test", help="held-out dataset root (default: rendered from test_seed)")
        elif name == "run":
            p.add_argument("--frames", help="folder of NNNNNN.png frames")
            p.add_argument("--script", help="render a scripted stream instead, e.g. 1x20,2x20")
            p.add_argument("--occlusions", help="occlusion bursts for --script, e.g. 40:8")
            p.add_argument("--required-run", type=int)
            p.add_argument("--anomaly-mode", choices=("reset", "pause"))
            p.add_argument("--fps", type=float)
        else:
            p.add_argument("--frames", type=int, help="frames to time (>= 200)")

    p = sub.add_parser("compare", parents=[common], help="all loss modes x seeds on clean/occluded splits")
    p.add_argument("--data", help="dataset root (default: config root)")
    p.add_argument("--seeds", type=int, help="seeds per mode")
    p.add_argument("--epochs", type=int)
    p.add_argument("--modes", help="comma-separated subset of loss modes")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--corrupt", metavar="PARAM", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("config", parents=[common], help="print the resolved configuration")
    p.add_argument("--docs", action="store_true", help="annotate every key")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name in ("config", "seed", "out", "set"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        print("stepmetric: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"stepmetric {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DatasetError, CheckpointError) as exc:
        print(f"stepmetric {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StepMetricError as exc:
        print(f"stepmetric {args.command}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort report with exit code 1
        log.exception("internal failure")
        print(f"stepmetric {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
