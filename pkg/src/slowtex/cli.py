"""Command-line entry point: ``slowtex <subcommand> [options]``.

Configuration is resolved in order: ``--preset``, then ``--config`` JSON,
then individual ``--<key>`` flags. The effective configuration is embedded
in every artifact written.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import classifier, filter_bank, fisher_encoding, pipeline
from .config import HELP, PRESETS, PipelineConfig
from .errors import EmptyDataset, SlowtexError
from .local_features import write_features
from .synth_bench import SynthSpec, write_dataset
from .video_io import VideoManifest, load_video, read_manifest_csv, scan_manifest

log = logging.getLogger("slowtex")

FILTERS_NAME = "filters.slf"
ENCODER_NAME = "encoder.sfe"
SVM_NAME = "svm.ssm"
REPORT_NAME = "report.json"
ABLATIONS = {"af": ("af",), "vf": ("vf",), "af+vf": ("af", "vf")}


# --- config flags -----------------------------------------------------------

def _flag(key):
    return "--" + key.replace("_", "-")


def _parse_value(key, text):
    default = getattr(PipelineConfig(), key)
    if key == "r":
        return None if text.lower() in ("none", "null") else float(text)
    if key == "scales":
        return tuple(float(s) for s in text.split(","))
    if key == "channels":
        return tuple(s.strip() for s in text.split(",") if s.strip())
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    return type(default)(text)


def _show(v):
    if isinstance(v, tuple):
        return ",".join(f"{x:.6g}" if isinstance(x, float) else str(x) for x in v)
    return "null" if v is None else str(v)


def add_config_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="JSON configuration file")
    g.add_argument("--preset", choices=sorted(PRESETS),
                   help="resolution preset applied before --config and flags")
    defaults = PipelineConfig()
    for key in defaults.to_dict():
        g.add_argument(_flag(key), dest=f"cfg_{key}", default=argparse.SUPPRESS,
                       metavar=key.upper(),
                       help=f"{HELP.get(key, key)} (default: {_show(getattr(defaults, key))})")


def resolve_config(args, **overrides) -> PipelineConfig:
    d = {}
    if getattr(args, "preset", None):
        d.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        d.update(json.loads(Path(args.config).read_text()))
    for name, text in vars(args).items():
        if name.startswith("cfg_"):
            key = name[4:]
            d[key] = _parse_value(key, text)
    d.update(overrides)
    return PipelineConfig.from_dict(d)


# --- dataset helpers ------------------------------------------------------

def load_manifest(path) -> VideoManifest:
    path = Path(path)
    if path.is_dir():
        layout = "csv-index" if (path / "manifest.csv").exists() else "class-subdirs"
        return scan_manifest(path, layout)
    return read_manifest_csv(path)


def filter_entries(manifest: VideoManifest, cfg: PipelineConfig):
    """Videos used for filter learning.

    Entries tagged ``filters`` if any exist, else a seeded sample of
    ``n_filter_videos`` entries that are not tagged ``test``.
    """
    tagged = [e for e in manifest.entries if e[2] == "filters"]
    if tagged:
        return tagged
    pool = [e for e in manifest.entries if e[2] != "test"]
    if not pool:
        raise EmptyDataset("no videos available for filter learning")
    if len(pool) <= cfg.n_filter_videos:
        return pool
    rng = np.random.default_rng([cfg.seed, 3])
    pick = np.sort(rng.choice(len(pool), size=cfg.n_filter_videos, replace=False))
    return [pool[i] for i in pick]


def recognition_entries(manifest: VideoManifest):
    entries = [e for e in manifest.entries if e[2] != "filters"]
    if not entries:
        raise EmptyDataset("manifest has no videos outside the filter-learning set")
    return entries


def load_videos(entries, cfg):
    return [load_video(e[0], max_frames=cfg.max_frames) for e in entries]


def _provenance(cfg, entries, **extra):
    meta = {"config": cfg.to_dict(), "n_videos": len(entries)}
    meta.update(extra)
    return meta


def _parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    _parent(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _extract(videos, fb, cfg, args):
    if getattr(args, "no_cache", False):
        return pipeline.extract_all(videos, fb, cfg, args.threads), None
    if getattr(args, "cache_dir", None):
        return pipeline.extract_all(videos, fb, cfg, args.threads, args.cache_dir), None
    tmp = tempfile.TemporaryDirectory(prefix="slowtex-features-")
    return pipeline.extract_all(videos, fb, cfg, args.threads, tmp.name), tmp


def _load_filters(path, cfg):
    fb = filter_bank.load(path)
    if fb.q != cfg.n_filters or fb.group_size != cfg.group_size:
        log.warning("filter file has %d filters in groups of %d; config says %d / %d, using file",
                    fb.q, fb.group_size, cfg.n_filters, cfg.group_size)
        cfg = cfg.replace(n_filters=fb.q, group_size=fb.group_size)
    return fb, cfg


# --- subcommands ------------------------------------------------------------

def cmd_synth_gen(args):
    spec = SynthSpec(videos_per_class=args.videos_per_class,
                     height=args.size[0], width=args.size[1], length=args.size[2],
                     noise_sigma=args.noise_sigma, seed=args.synth_seed)
    man = write_dataset(spec, args.out, args.filter_videos_per_class)
    _write_json(Path(args.out) / "synth.json", spec.to_dict())
    print(f"wrote {len(man)} videos to {args.out}")


def learn(manifest, cfg):
    entries = filter_entries(manifest, cfg)
    videos = load_videos(entries, cfg)
    log.info("learning %s filters from %d videos", cfg.method, len(videos))
    return pipeline.learn_filters(videos, cfg, _provenance(cfg, entries))


def cmd_learn_filters(args):
    cfg = resolve_config(args)
    fb = learn(load_manifest(args.manifest), cfg)
    filter_bank.save(fb, _parent(args.out))
    print(f"wrote {fb.q} filters of size {fb.spec.h_s}x{fb.spec.w_s} "
          f"in {len(fb.groups)} groups to {args.out}")


def cmd_export_filters(args):
    fb = filter_bank.load(args.filters)
    files = filter_bank.export_filters(fb, args.out)
    print(f"wrote {len(files)} images to {args.out}")


def cmd_extract(args):
    cfg = resolve_config(args)
    fb, cfg = _load_filters(args.filters, cfg)
    video = load_video(args.video, max_frames=cfg.max_frames)
    feats = pipeline.extract_features(video, fb, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for key, arr in feats.items():
        write_features(out / f"features_{key}.bin", arr)
    _write_json(out / "features.json", {"config": cfg.to_dict(), "video": str(args.video),
                                        "sets": {k: list(v.shape) for k, v in feats.items()}})
    for key, arr in feats.items():
        print(f"{key}: {arr.shape[0]} features of dim {arr.shape[1]}")


def _train_split(entries):
    idx = [i for i, e in enumerate(entries) if e[2] == "train"]
    return idx or [i for i, e in enumerate(entries) if e[2] != "test"]


def train_and_save(feats, entries, cfg, out, threads):
    labels = [e[1] for e in entries]
    train = _train_split(entries)
    encoders, svm = pipeline.train_models(feats, labels, train, cfg, threads)
    meta = _provenance(cfg, [entries[i] for i in train])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fisher_encoding.save(encoders, out / ENCODER_NAME, meta)
    classifier.save(svm, out / SVM_NAME, meta)
    log.info("representation dim %d (%d sets)", cfg.representation_dim, len(encoders))
    return encoders, svm


def cmd_train(args):
    cfg = resolve_config(args)
    fb, cfg = _load_filters(args.filters, cfg)
    entries = recognition_entries(load_manifest(args.manifest))
    feats, tmp = _extract(load_videos(entries, cfg), fb, cfg, args)
    train_and_save(feats, entries, cfg, args.out, args.threads)
    print(f"wrote {ENCODER_NAME} and {SVM_NAME} to {args.out} "
          f"(representation dim {cfg.representation_dim})")


def _heldout_report(feats, entries, cfg, encoders, svm, threads):
    labels = [e[1] for e in entries]
    test = [i for i, e in enumerate(entries) if e[2] == "test"]
    if not test:
        raise EmptyDataset("protocol heldout needs entries tagged 'test'")

    def fit_predict(train, test_idx):
        return classifier.predict_many(svm, pipeline.encode_all(feats, encoders, test_idx, threads))

    return classifier.run_protocol("heldout", [(np.array(_train_split(entries)), np.array(test))],
                                   labels, fit_predict, cfg.seed)


def evaluate(manifest, fb, cfg, args, models=None):
    entries = recognition_entries(manifest)
    labels = [e[1] for e in entries]
    feats, tmp = _extract(load_videos(entries, cfg), fb, cfg, args)
    try:
        if args.protocol == "heldout":
            if models is not None and not args.end_to_end:
                encoders, _ = fisher_encoding.load(Path(models) / ENCODER_NAME)
                svm = classifier.load(Path(models) / SVM_NAME)
            else:
                encoders, svm = pipeline.train_models(feats, labels, _train_split(entries), cfg,
                                                      args.threads)
            report = _heldout_report(feats, entries, cfg, encoders, svm, args.threads)
            report.extra.update(channels=list(cfg.channels), method=cfg.method,
                                representation_dim=cfg.representation_dim)
        else:
            report = pipeline.evaluate_features(feats, labels, cfg, args.protocol,
                                                args.n_splits, args.n_train, args.threads)
        report.extra["config"] = cfg.to_dict()
        return report, feats, entries, tmp
    except BaseException:
        if tmp is not None:
            tmp.cleanup()
        raise


def write_report(report, args, out_path):
    _parent(out_path).write_text(report.to_json())
    if args.confusion_csv:
        with open(_parent(args.confusion_csv), "w") as fh:
            fh.write("truth," + ",".join(report.class_labels) + "\n")
            conf = np.asarray(report.confusion)
            for c, row in zip(report.class_labels, conf):
                fh.write(c + "," + ",".join(str(int(v)) for v in row) + "\n")
    print(f"protocol {report.protocol}: per-split accuracy "
          + " ".join(f"{a:.4f}" for a in report.per_split))
    print(f"mean accuracy {report.mean:.4f} over {len(report.per_split)} split(s)")


def cmd_evaluate(args):
    cfg = resolve_config(args, channels=ABLATIONS[args.ablate])
    fb, cfg = _load_filters(args.filters, cfg)
    report, _, _, tmp = evaluate(load_manifest(args.manifest), fb, cfg, args, args.models)
    if tmp is not None:
        tmp.cleanup()
    write_report(report, args, args.out)


def cmd_pipeline(args):
    cfg = resolve_config(args, channels=ABLATIONS[args.ablate])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.synth:
        write_dataset(SynthSpec(videos_per_class=args.videos_per_class,
                                noise_sigma=args.noise_sigma, seed=args.synth_seed),
                      out / "data", args.filter_videos_per_class)
        data = out / "data" / "manifest.csv"
    elif args.data is None:
        raise EmptyDataset("pipeline needs --data or --synth")
    else:
        data = args.data
    manifest = load_manifest(data)
    fb = learn(manifest, cfg)
    filter_bank.save(fb, out / FILTERS_NAME)
    report, feats, entries, tmp = evaluate(manifest, fb, cfg, args)
    try:
        train_and_save(feats, entries, cfg, out, args.threads)
    finally:
        if tmp is not None:
            tmp.cleanup()
    write_report(report, args, out / REPORT_NAME)


def cmd_bench(args):
    """Feature-extraction throughput for several filter counts."""
    spec = SynthSpec(videos_per_class=args.videos_per_class, seed=args.synth_seed)
    from .synth_bench import filter_spec, generate
    videos, _ = generate(spec)
    fvideos, _ = generate(filter_spec(spec))
    rows = []
    for q in args.filter_counts:
        cfg = resolve_config(args, n_filters=q)
        fb = pipeline.learn_filters(fvideos, cfg)
        t0 = time.perf_counter()
        pipeline.extract_all(videos, fb, cfg, args.threads)
        dt = time.perf_counter() - t0
        frames = sum(min(v.length, cfg.max_frames) for v in videos)
        rows.append({"n_filters": q, "frames": frames, "seconds": dt, "fps": frames / dt})
        print(f"{q:3d} filters: {frames / dt:8.2f} frames/s ({frames} frames in {dt:.1f}s)")
    if args.out:
        _write_json(args.out, {"config": resolve_config(args).to_dict(), "rows": rows})


# --- parser -----------------------------------------------------------------

def _synth_args(p):
    p.add_argument("--videos-per-class", type=int, default=20)
    p.add_argument("--noise-sigma", type=float, default=8.0)
    p.add_argument("--synth-seed", type=int, default=0)
    p.add_argument("--filter-videos-per-class", type=int, default=5,
                   help="extra videos tagged 'filters' for filter learning (0 disables)")


def _eval_args(p):
    p.add_argument("--protocol", choices=["loo", "half", "fixed-count", "heldout"], default="half")
    p.add_argument("--n-splits", type=int, default=20)
    p.add_argument("--n-train", type=int, default=None, help="per-class count for fixed-count")
    p.add_argument("--ablate", choices=sorted(ABLATIONS), default="af+vf",
                   help="feature channels used")
    p.add_argument("--confusion-csv", type=Path)
    p.add_argument("--end-to-end", action="store_true",
                   help="heldout protocol: refit encoders and SVM instead of loading --models")
    _cache_args(p)


def _cache_args(p):
    p.add_argument("--cache-dir", type=Path,
                   help="keep memory-mapped local features here (default: a temporary directory)")
    p.add_argument("--no-cache", action="store_true", help="hold local features in memory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowtex", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text, config=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads; results do not depend on this")
        if config:
            add_config_args(p)
        p.set_defaults(func=fn)
        return p

    p = command("synth-gen", cmd_synth_gen, "write a labelled synthetic dataset", config=False)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--size", type=int, nargs=3, default=(50, 50, 50), metavar=("H", "W", "L"))
    _synth_args(p)

    p = command("learn-filters", cmd_learn_filters, "learn a filter bank from a dataset")
    p.add_argument("--manifest", type=Path, required=True, help="manifest CSV or dataset directory")
    p.add_argument("--out", type=Path, default=Path(FILTERS_NAME))

    p = command("export-filters", cmd_export_filters, "write filters as PGM images", config=False)
    p.add_argument("--filters", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = command("extract", cmd_extract, "local features of one video")
    p.add_argument("--filters", type=Path, required=True)
    p.add_argument("--video", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = command("train", cmd_train, "fit encoders and the SVM on the training split")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--filters", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="model directory")
    _cache_args(p)

    p = command("evaluate", cmd_evaluate, "run an evaluation protocol")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--filters", type=Path, required=True)
    p.add_argument("--models", type=Path, help="model directory for --protocol heldout")
    p.add_argument("--out", type=Path, default=Path(REPORT_NAME))
    _eval_args(p)

    p = command("pipeline", cmd_pipeline, "learn filters, evaluate and train final models")
    p.add_argument("--data", type=Path, help="manifest CSV or dataset directory")
    p.add_argument("--synth", action="store_true", help="generate a synthetic dataset first")
    p.add_argument("--out", type=Path, required=True)
    _synth_args(p)
    _eval_args(p)

    p = command("bench", cmd_bench, "feature-extraction throughput (frames per second)")
    p.add_argument("--filter-counts", type=int, nargs="+", default=[8, 16, 24])
    p.add_argument("--videos-per-class", type=int, default=2)
    p.add_argument("--synth-seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    return parser


def error_line(exc) -> str:
    code = exc.code if isinstance(exc, SlowtexError) else type(exc).__name__
    return "error: " + json.dumps({"code": code, "message": str(exc)}, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (SlowtexError, ValueError, KeyError, OSError) as exc:
        print(error_line(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
