"""Command-line entry point: ``synpower {gaussian,train,power,fmri,report}``.

Configuration comes from an optional JSON file (``--config``; a previous
run's manifest.json also works) overlaid with command-line flags.  Flags win.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, datasets, gan, neuro, pca
from .power import (PowerConfig, PowerCurve, PowerRunError, TestSpec, bootstrap_pool_seed,
                    default_n_start, power_curve, power_curve_fmri, smooth, synthetic_curve)
from .report import (ReportError, read_curve_csv, recommend_from_table, recommendation_dict, render_svg,
                     write_curve_csv, write_curve_plot, write_json, write_loss_trace)
from .sampling import (EmpiricalSource, GaussianSource, GenerativeSource, SamplingError, Strategy,
                       TaggedDataset, derive_seed, draw)
from .twosample import TestError

log = logging.getLogger("synpower")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_TRAIN = 4
EXIT_TEST = 5
EXIT_REPORT = 6
STAGE_CODES = {"config": EXIT_CONFIG, "ingest": EXIT_INGEST, "train": EXIT_TRAIN,
               "test": EXIT_TEST, "report": EXIT_REPORT}
THREADS_ENV = "SYNPOWER_THREADS"
MANIFEST_VERSION = 1

COMMON_DEFAULTS = {
    "seed": 0,
    "alpha": 0.05,
    "k_trials": 50,
    "grid": "20:500:20",
    "tests": ["t", "mmd-l1"],
    "permutations": 200,
    "smooth_window": 5,
    "target": 0.8,
    "multivariate_t": "hotelling",
}

SCENARIO_DEFAULTS = {
    "gaussian": {
        "dim": 10, "shift": 0.3, "pool_size": 1000, "skip_gan": False,
        "strategies": ["resample", "bootstrap", "synthetic"],
        "gan_iterations": None, "gan_hidden": 64,
    },
    "train": {"data": None, "conditional": False, "tag": None, "preset": "icw", "iterations": None,
              "gan_hidden": 64, "name": "model"},
    "power": {"data1": None, "data2": None, "ckpt1": None, "ckpt2": None},
    "fmri": {"volumes": None, "tags": None, "scores": None, "tag": None, "checkpoint": None,
             "train_inline": False, "pca_model": None, "components": 10, "gan_iterations": None,
             "gan_hidden": 64},
    "report": {"curves": [], "title": ""},
}

DECISIONS = {
    "n_meaning": "per-group sample size",
    "bootstrap": "subsampling without replacement from a fixed pool",
    "multivariate_t": "Hotelling T2",
    "mmd_kernel": "Gaussian, median-heuristic bandwidth, permutation p-values",
    "mmd_l1_locations": "5 pooled rows + 5 jittered copies (sd = bandwidth/2)",
    "normalization": "per-volume min-max to [0, 1]",
    "naive_gan_generator_loss": "non-saturating -E[log D(G(z))]",
    "wgan_critic_update": "E[D(G(z|y))] - E[D(x|y)] + lambda * GP",
    "conditioning": "label vector concatenated to generator and critic inputs",
    "ci": "Wilson 95%",
    "ci_band_meaning": "shaded bands are Wilson 95% intervals of the power estimate",
    "pca_fit": "fitted on real data only",
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (ValueError, RuntimeError, OSError, KeyError, ArithmeticError) as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


# ---------------------------------------------------------------- config

def parse_grid(text: str):
    try:
        start, end, step = (int(x) for x in str(text).split(":"))
    except ValueError:
        raise StageError("config", f"grid must look like START:END:STEP, got {text!r}") from None
    return start, end, step


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError("config", f"cannot read config {path}: {exc}") from exc
    if isinstance(doc, dict) and "manifest_version" in doc:
        doc = doc.get("config", {})
    if not isinstance(doc, dict):
        raise StageError("config", f"config {path} must be a JSON object")
    return doc


def merged_config(scenario: str, args: argparse.Namespace) -> dict:
    cfg = dict(COMMON_DEFAULTS)
    cfg.update(SCENARIO_DEFAULTS[scenario])
    file_cfg = load_config(args.config)
    unknown = set(file_cfg) - set(cfg) - {"scenario"}
    if unknown:
        raise StageError("config", f"unknown config keys {sorted(unknown)}")
    cfg.update(file_cfg)
    for key, value in vars(args).items():
        if key in ("config", "command", "out", "threads", "verbose") or value is None:
            continue
        if value is False and key in cfg and isinstance(cfg[key], bool):
            continue
        cfg[key] = value
    cfg["scenario"] = scenario
    return cfg


def thread_count(args) -> int:
    if args.threads is not None:
        return args.threads
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise StageError("config", f"{THREADS_ENV} must be an integer") from None


def power_config(cfg: dict, test: str, threads: int, d: int, grid: Optional[str] = None) -> PowerConfig:
    start, end, step = parse_grid(grid or cfg["grid"])
    with stage("config"):
        spec = TestSpec(test, cfg["permutations"], cfg["multivariate_t"])
        if start < spec.min_n(d):
            raise ValueError(f"grid start {start} is below the minimum sample size {spec.min_n(d)} "
                             f"for test {spec.resolved(d)!r} on {d} columns (suggested start {default_n_start(d)})")
        return PowerConfig(start, end, step, cfg["k_trials"], cfg["alpha"], spec, Strategy.RESAMPLE,
                           cfg["seed"], threads)


@contextlib.contextmanager
def staging(out: Path):
    """Build outputs in a scratch directory and move them into ``out`` on success."""
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    for item in sorted(tmp.iterdir()):
        dest = out / item.name
        if dest.is_dir():
            shutil.rmtree(dest)
        elif dest.exists():
            dest.unlink()
        item.replace(dest)
    tmp.rmdir()


def manifest(cfg: dict, seeds: dict, curves: List[dict], extra: Optional[dict] = None) -> dict:
    doc = {
        "manifest_version": MANIFEST_VERSION,
        "tool": "synpower",
        "version": __version__,
        "scenario": cfg["scenario"],
        "config": cfg,
        "seeds": seeds,
        "decisions": dict(DECISIONS, smoothing_window=cfg["smooth_window"]),
        "curves": curves,
    }
    if extra:
        doc.update(extra)
    return doc


def _emit_curve(curve: PowerCurve, cfg: dict, directory: Path, entries: List[dict], filename: str) -> PowerCurve:
    curve = smooth(curve, cfg["smooth_window"])
    write_curve_csv(curve, directory / filename)
    entries.append({"file": filename, "label": curve.label, "fingerprint": curve.fingerprint,
                    "recommendation": recommendation_dict(curve, cfg["target"]), "skipped": curve.skipped})
    return curve


def _train_config_for(preset: str, **overrides) -> gan.TrainConfig:
    if preset == "naive":
        return gan.TrainConfig.naive_preset(**overrides)
    if preset == "icw":
        return gan.TrainConfig.icw_preset(**overrides)
    raise StageError("config", f"unknown preset {preset!r} (choose naive or icw)")


# ---------------------------------------------------------------- commands

def cmd_gaussian(cfg: dict, out: Path, threads: int) -> dict:
    """Two Gaussians N(0, I) and N(shift * 1, I): resample, bootstrap and GAN curves."""
    d = cfg["dim"]
    strategies = [Strategy(s) for s in cfg["strategies"]]
    if cfg["skip_gan"]:
        strategies = [s for s in strategies if s is not Strategy.SYNTHETIC]
    seed = cfg["seed"]
    with stage("config"):
        src = [GaussianSource(np.zeros(d), np.ones(d), name="D1"),
               GaussianSource(np.full(d, cfg["shift"]), np.ones(d), name="D2")]
    seeds = {"master": seed, "pool": [bootstrap_pool_seed(seed, g) for g in (1, 2)]}
    with stage("ingest"):
        pools = [draw(s, Strategy.RESAMPLE, cfg["pool_size"], ps) for s, ps in zip(src, seeds["pool"])]
    with staging(out) as tmp:
        generators = None
        if Strategy.SYNTHETIC in strategies:
            generators = []
            seeds["gan"] = []
            for g, pool in enumerate(pools, start=1):
                gseed = derive_seed(seed, 9, g)
                seeds["gan"].append(gseed)
                overrides = {"seed": gseed}
                if cfg["gan_iterations"] is not None:
                    overrides["iterations"] = cfg["gan_iterations"]
                tcfg = gan.TrainConfig.naive_preset(**overrides)
                spec_g, spec_d = gan.default_specs(d, tcfg, cfg["gan_hidden"])
                log.info("training GAN for D%d (%d iterations)", g, tcfg.iterations)
                with stage("train"):
                    ckpt = gan.train(pool, spec_g, spec_d, tcfg)
                    gan.save_checkpoint(ckpt, tmp / f"gan_D{g}.json")
                    write_loss_trace(ckpt.loss_trace, tmp / f"gan_D{g}_loss.csv")
                generators.append(GenerativeSource(ckpt, name=f"synthetic-D{g}"))
        entries: List[dict] = []
        for test in cfg["tests"]:
            pcfg = power_config(cfg, test, threads, d)
            curves = []
            with stage("test"):
                if Strategy.RESAMPLE in strategies or Strategy.SYNTHETIC in strategies:
                    real, synth = power_curve(src[0], src[1], pcfg,
                                              tuple(generators) if generators else None)
                    if Strategy.RESAMPLE in strategies:
                        curves.append(real)
                    if synth is not None:
                        curves.append(synth)
                if Strategy.BOOTSTRAP in strategies:
                    boot_cfg = replace(pcfg, real_strategy=Strategy.BOOTSTRAP)
                    boot, _ = power_curve(EmpiricalSource(pools[0], name="pool-D1"),
                                          EmpiricalSource(pools[1], name="pool-D2"), boot_cfg)
                    curves.append(boot)
            with stage("report"):
                emitted = [_emit_curve(c, cfg, tmp, entries, f"{c.name}.csv") for c in curves]
                write_curve_plot(emitted, tmp / f"power_{emitted[0].label['test']}.svg",
                                 f"{emitted[0].label['test']}: D1 vs D2", cfg["target"])
        with stage("report"):
            write_json(manifest(cfg, seeds, entries), tmp / "manifest.json")
    return {"curves": entries}


def cmd_train(cfg: dict, out: Path, threads: int) -> dict:
    """Train a GAN on an F32D matrix (conditional when a tag sidecar is used)."""
    if not cfg["data"]:
        raise StageError("config", "train needs --data PATH")
    with stage("ingest"):
        conditional = bool(cfg["conditional"] or cfg["tag"])
        if conditional:
            ds = datasets.read_tagged(cfg["data"])
            rows = ds.rows
            vocab = (cfg["tag"],) if cfg["tag"] else ds.vocabulary
            if cfg["tag"] and cfg["tag"] not in ds.vocabulary:
                raise ValueError(f"tag {cfg['tag']!r} not in vocabulary {list(ds.vocabulary)}")
            conditions = [[t for t in vocab if t in tags] for tags in ds.tags]
        else:
            rows = datasets.read_f32d(cfg["data"]).astype(np.float64)
            if rows.ndim != 2:
                raise ValueError(f"training data must be a matrix, got shape {rows.shape}")
            vocab, conditions = None, None
    overrides = {"seed": cfg["seed"], "condition_vocab": vocab}
    if cfg["iterations"] is not None:
        overrides["iterations"] = cfg["iterations"]
    with stage("config"):
        tcfg = _train_config_for(cfg["preset"], **overrides)
        spec_g, spec_d = gan.default_specs(rows.shape[1], tcfg, cfg["gan_hidden"])
    with staging(out) as tmp:
        with stage("train"):
            ckpt = gan.train(rows, spec_g, spec_d, tcfg, conditions)
            gan.save_checkpoint(ckpt, tmp / f"{cfg['name']}.json")
            write_loss_trace(ckpt.loss_trace, tmp / f"{cfg['name']}_loss.csv")
        with stage("report"):
            write_json(manifest(cfg, {"train": tcfg.seed}, [], {"train_config": tcfg.to_dict()}),
                       tmp / "manifest.json")
    return {"checkpoint": str(out / f"{cfg['name']}.json")}


def cmd_power(cfg: dict, out: Path, threads: int) -> dict:
    """Power curves between two F32D datasets (bootstrap) and/or two checkpoints (synthetic)."""
    have_data = cfg["data1"] and cfg["data2"]
    have_ckpt = cfg["ckpt1"] and cfg["ckpt2"]
    if not (have_data or have_ckpt):
        raise StageError("config", "power needs --data1/--data2 and/or --ckpt1/--ckpt2")
    with stage("ingest"):
        pools = [datasets.read_f32d(cfg[k]).astype(np.float64) for k in ("data1", "data2")] if have_data else None
        ckpts = [gan.load_checkpoint(cfg[k]) for k in ("ckpt1", "ckpt2")] if have_ckpt else None
    d = pools[0].shape[1] if pools else ckpts[0].data_dim
    entries: List[dict] = []
    with staging(out) as tmp:
        for test in cfg["tests"]:
            pcfg = power_config(cfg, test, threads, d)
            curves = []
            with stage("test"):
                if pools:
                    real, _ = power_curve(EmpiricalSource(pools[0], name=Path(cfg["data1"]).stem),
                                          EmpiricalSource(pools[1], name=Path(cfg["data2"]).stem),
                                          replace(pcfg, real_strategy=Strategy.BOOTSTRAP))
                    curves.append(real)
                if ckpts:
                    g = [GenerativeSource(c, name=f"synthetic-{Path(cfg[k]).stem}")
                         for c, k in zip(ckpts, ("ckpt1", "ckpt2"))]
                    curves.append(synthetic_curve(g[0], g[1], pcfg))
            with stage("report"):
                emitted = [_emit_curve(c, cfg, tmp, entries, f"{c.name}.csv") for c in curves]
                write_curve_plot(emitted, tmp / f"power_{emitted[0].label['test']}.svg",
                                 emitted[0].label["test"], cfg["target"])
        with stage("report"):
            write_json(manifest(cfg, {"master": cfg["seed"]}, entries), tmp / "manifest.json")
    return {"curves": entries}


def _ingest_volumes(cfg: dict, tmp: Path):
    vol_dir = Path(cfg["volumes"])
    files = sorted(p.name for p in vol_dir.iterdir() if p.suffix == ".nii")
    if not files:
        raise ValueError(f"no .nii files in {vol_dir}")
    table = neuro.load_tags(Path(cfg["tags"]).read_text(encoding="utf-8"), files)
    order = {name: i for i, name in enumerate(table.files)}
    volumes, nan_counts = [], {}
    for name in files:
        vol = neuro.load_nifti(vol_dir / name)
        if vol.nonfinite_replaced:
            nan_counts[name] = vol.nonfinite_replaced
        volumes.append(neuro.normalize(vol))
    flat = neuro.flatten(volumes)
    if cfg["pca_model"]:
        model = pca.load_model(cfg["pca_model"])
    else:
        model = pca.fit(flat.rows, cfg["components"])
    pca.save_model(model, tmp / "pca_model.json")
    scores = pca.transform(model, flat.rows)
    tags = [table.tags[order[name]] for name in files]
    ds = TaggedDataset(scores, tags, table.vocabulary, tuple(files))
    datasets.write_f32d(tmp / "scores.f32d", scores, [sorted(t) for t in tags], table.vocabulary)
    return ds, {"volumes": len(files), "voxels": int(flat.rows.shape[1]), "nonfinite_voxels": nan_counts,
                "pca_eigenvalues": model.eigenvalues.tolist()}


def cmd_fmri(cfg: dict, out: Path, threads: int) -> dict:
    """Tag-split power analysis: volumes -> PCA scores -> real vs conditional-synthetic curves."""
    tag = cfg["tag"]
    if not tag:
        raise StageError("config", "fmri needs --tag NAME")
    if not cfg["scores"] and not (cfg["volumes"] and cfg["tags"]):
        raise StageError("config", "fmri needs --scores PATH or --volumes DIR --tags SIDECAR")
    if not cfg["checkpoint"] and not cfg["train_inline"]:
        raise StageError("config", "fmri needs --checkpoint PATH or --train-inline")
    entries: List[dict] = []
    seeds = {"master": cfg["seed"]}
    with staging(out) as tmp:
        with stage("ingest"):
            if cfg["scores"]:
                ds = datasets.read_tagged(cfg["scores"])
                ingest_info = {"scores": str(cfg["scores"])}
            else:
                ds, ingest_info = _ingest_volumes(cfg, tmp)
            if tag not in ds.vocabulary:
                raise ValueError(f"tag {tag!r} is not in the vocabulary {list(ds.vocabulary)}")
        d = ds.rows.shape[1]
        if cfg["checkpoint"]:
            with stage("ingest"):
                ckpt = gan.load_checkpoint(cfg["checkpoint"])
        else:
            overrides = {"seed": derive_seed(cfg["seed"], 9, 0), "condition_vocab": (tag,)}
            if cfg["gan_iterations"] is not None:
                overrides["iterations"] = cfg["gan_iterations"]
            tcfg = gan.TrainConfig.icw_preset(**overrides)
            seeds["gan"] = tcfg.seed
            spec_g, spec_d = gan.default_specs(d, tcfg, cfg["gan_hidden"])
            with stage("train"):
                conditions = [[tag] if tag in t else [] for t in ds.tags]
                ckpt = gan.train(ds.rows, spec_g, spec_d, tcfg, conditions)
                gan.save_checkpoint(ckpt, tmp / f"gan_{tag}.json")
                write_loss_trace(ckpt.loss_trace, tmp / f"gan_{tag}_loss.csv")
        comparison = {}
        for test in cfg["tests"]:
            pcfg = power_config(cfg, test, threads, d)
            with stage("test"):
                real, synth = power_curve_fmri(ds, tag, ckpt, pcfg)
            with stage("report"):
                real = _emit_curve(real, cfg, tmp, entries, f"{real.name}.csv")
                synth = _emit_curve(synth, cfg, tmp, entries, f"{synth.name}.csv")
                write_curve_plot([real, synth], tmp / f"power_{tag}_{real.label['test']}.svg",
                                 f"{real.label['test']}: with vs without '{tag}'", cfg["target"])
                shared = {p.n: p.gamma for p in real.points}
                pairs = [(shared[p.n], p.gamma) for p in synth.points if p.n in shared]
                comparison[real.label["test"]] = {
                    "grid_points_compared": len(pairs),
                    "synthetic_not_above_real": sum(s <= r for r, s in pairs),
                }
        with stage("report"):
            counts = {"with_tag": int(sum(tag in t for t in ds.tags)),
                      "without_tag": int(sum(tag not in t for t in ds.tags))}
            write_json(manifest(cfg, seeds, entries, {"ingest": ingest_info, "split": counts,
                                                      "conservativeness": comparison}),
                       tmp / "manifest.json")
    return {"curves": entries}


def cmd_report(cfg: dict, out: Path, threads: int) -> dict:
    """Plot existing curve tables and summarize their recommendations."""
    if not cfg["curves"]:
        raise StageError("config", "report needs at least one --curves PATH")
    with stage("report"):
        tables = [read_curve_csv(p) for p in cfg["curves"]]
        with staging(out) as tmp:
            (tmp / "report.svg").write_text(render_svg(tables, cfg["title"], cfg["target"]), encoding="utf-8")
            summary = {t.name: recommend_from_table(t, cfg["target"]) for t in tables}
            write_json({"target": cfg["target"], "recommendations": summary}, tmp / "summary.json")
    return summary


COMMANDS = {"gaussian": cmd_gaussian, "train": cmd_train, "power": cmd_power, "fmri": cmd_fmri,
            "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or a previous manifest.json")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    common.add_argument("--alpha", type=float)
    common.add_argument("--k-trials", dest="k_trials", type=int)
    common.add_argument("--grid", help="START:END:STEP per-group sample sizes")
    common.add_argument("--test", dest="tests", action="append",
                        choices=["t", "hotelling", "welch", "student", "welch-bonferroni", "mmd", "mmd-l1"],
                        help="repeatable; default: t and mmd-l1")
    common.add_argument("--permutations", type=int)
    common.add_argument("--smooth-window", dest="smooth_window", type=int)
    common.add_argument("--target", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="synpower", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"synpower {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gaussian", parents=[common], help="simulated Gaussian study")
    p.add_argument("--strategy", dest="strategies", action="append",
                   choices=["resample", "bootstrap", "synthetic"])
    p.add_argument("--skip-gan", dest="skip_gan", action="store_true")
    p.add_argument("--dim", type=int)
    p.add_argument("--shift", type=float)
    p.add_argument("--pool-size", dest="pool_size", type=int)
    p.add_argument("--gan-iterations", dest="gan_iterations", type=int)

    p = sub.add_parser("train", parents=[common], help="train a GAN checkpoint")
    p.add_argument("--data", help="F32D matrix")
    p.add_argument("--conditional", action="store_true", help="condition on the sidecar vocabulary")
    p.add_argument("--tag", help="condition on this single tag")
    p.add_argument("--preset", choices=["naive", "icw"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--name")

    p = sub.add_parser("power", parents=[common], help="power curves from data files / checkpoints")
    for k in ("data1", "data2", "ckpt1", "ckpt2"):
        p.add_argument(f"--{k}")

    p = sub.add_parser("fmri", parents=[common], help="tag-split fMRI power analysis")
    p.add_argument("--volumes", help="directory of single-file NIfTI-1 volumes")
    p.add_argument("--tags", help="JSON tag sidecar for the volumes")
    p.add_argument("--scores", help="pre-projected F32D score matrix with .tags.json sidecar")
    p.add_argument("--tag")
    p.add_argument("--checkpoint")
    p.add_argument("--train-inline", dest="train_inline", action="store_true")
    p.add_argument("--pca-model", dest="pca_model")
    p.add_argument("--components", type=int)
    p.add_argument("--gan-iterations", dest="gan_iterations", type=int)

    p = sub.add_parser("report", parents=[common], help="plot curve tables")
    p.add_argument("--curves", action="append", help="repeatable curve CSV path")
    p.add_argument("--title")
    return parser


def run(argv=None) -> dict:
    """Parse ``argv`` and execute; raises :class:`StageError` on failure."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = merged_config(args.command, args)
    threads = thread_count(args)
    return COMMANDS[args.command](cfg, Path(args.out), threads)


def main(argv=None) -> int:
    try:
        run(argv)
    except StageError as exc:
        print(f"synpower: {exc}", file=sys.stderr)
        return STAGE_CODES[exc.stage]
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
