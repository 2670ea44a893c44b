"""Command-line interface: generate-data, train, evaluate, distort, report.

Every command resolves its configuration as flag > file > default, writes
artifacts atomically, and appends one record to the run ledger only after
all artifacts of the invocation are in place.
"""

import argparse
import glob
import json
import os
import sys
import time

import numpy as np

from . import metrics, train
from .checkpoint import Checkpoint, load_detector_checkpoint, save_checkpoint
from .config import load_config
from .degrade import apply_random_level
from .errors import ConfigError, GandetError
from .reports import (
    append_run_record,
    atomic_write_text,
    make_run_record,
    plot_sweep,
    render_table,
    write_json_report,
)
from .rng import substream
from .synth import (
    generate_dataset,
    load_image_png,
    load_manifest,
    materialize_split,
    save_image_png,
    save_manifest,
)

SUITES = ("table3", "table6", "losses", "cross", "coco")


def _paths(config):
    exp = config.experiment_dir()
    return {
        "exp": exp,
        "manifest": os.path.join(exp, "manifest.jsonl"),
        "checkpoints": os.path.join(exp, "checkpoints"),
        "logs": os.path.join(exp, "logs"),
        "reports": os.path.join(exp, "reports"),
        "ledger": os.path.join(config.out_dir(), "runs.jsonl"),
    }


def _require(path, hint):
    if not os.path.exists(path):
        raise ConfigError(f"missing required artifact {path} — run `{hint}` first")


# ------------------------------------------------------------ generate ---
def cmd_generate_data(config):
    started = time.monotonic()
    p = _paths(config)
    os.makedirs(p["exp"], exist_ok=True)
    manifest = generate_dataset(config.scene_spec(), config.counts(), config["data_seed"])
    tmp = p["manifest"] + ".tmp"
    save_manifest(manifest, tmp)
    os.replace(tmp, p["manifest"])
    append_run_record(p["ledger"], make_run_record(
        config, "generate-data", [p["manifest"]], time.monotonic() - started))
    return p["manifest"]


# --------------------------------------------------------------- train ---
def _save_detector(params, config, mode, path, epoch, parent=None):
    meta = {
        "config_hash": config.hash(),
        "seed": config["train_seed"],
        "epoch": epoch,
        "mode": mode,
        "parent": parent,
    }
    ckpt = Checkpoint({k: np.asarray(v, dtype=np.float32) for k, v in params.items()}, meta)
    save_checkpoint(ckpt, path)
    return ckpt


def cmd_train(config, mode, baseline_path=None, freeze_after_layer=None):
    if mode not in ("baseline", "finetune", "gando"):
        raise ConfigError(f"unknown training mode {mode!r}")
    started = time.monotonic()
    p = _paths(config)
    _require(p["manifest"], "gandet generate-data")
    manifest = load_manifest(p["manifest"])
    data = train.TrainValData.from_manifest(manifest)
    det_cfg = config.detector_config()
    tcfg = config.train_config(mode)
    if freeze_after_layer is not None:
        tcfg.freeze_after_layer = freeze_after_layer

    os.makedirs(p["checkpoints"], exist_ok=True)
    os.makedirs(p["logs"], exist_ok=True)
    ckpt_path = os.path.join(p["checkpoints"], f"{mode}.ckpt")
    parent = None

    decay_paths = []

    def on_decay(params, epoch, mult):
        path = os.path.join(p["checkpoints"], f"{mode}_epoch{epoch}.ckpt")
        _save_detector(params, config, mode, path, epoch, parent)
        decay_paths.append(path)

    if mode == "baseline":
        params, log = train.train_baseline(det_cfg, tcfg, data,
                                           init_seed=config["det_init_seed"])
    else:
        baseline_path = baseline_path or os.path.join(p["checkpoints"], "baseline.ckpt")
        _require(baseline_path, "gandet train --mode baseline")
        base_ckpt = load_detector_checkpoint(baseline_path, det_cfg)
        parent = base_ckpt.param_bytes()
        pool = config.pool()
        trainer = train.train_gando if mode == "gando" else train.train_finetune
        params, log = trainer(det_cfg, tcfg, base_ckpt.params, data, pool,
                              on_decay=on_decay)

    final_epoch = log.epochs[-1]["epoch"] if log.epochs else 0
    _save_detector(params, config, mode, ckpt_path, final_epoch, parent)
    log_path = os.path.join(p["logs"], f"{mode}.jsonl")
    atomic_write_text("".join(json.dumps(r) + "\n" for r in log.rows()), log_path)

    append_run_record(p["ledger"], make_run_record(
        config, f"train --mode {mode}", [ckpt_path, log_path] + decay_paths,
        time.monotonic() - started))
    return ckpt_path, log_path


# ------------------------------------------------------------ evaluate ---
def _load_models(config, checkpoints):
    det_cfg = config.detector_config()
    models = {}
    digests = {}
    for name, path in checkpoints.items():
        _require(path, "gandet train")
        ckpt = load_detector_checkpoint(path, det_cfg)
        models[name] = ckpt.params
        digests[name] = ckpt.param_bytes()
    return det_cfg, models, digests


def _distorted_copy(images, pool, seed, tag):
    return np.stack([
        apply_random_level(images[i], pool, substream(seed, tag, i))[0]
        for i in range(len(images))
    ])


def _predict_kw(config):
    return {
        "conf_threshold": config["eval_conf_threshold"],
        "nms_iou": config["eval_nms_iou"],
        "max_dets": config["eval_max_dets"],
    }


def cmd_evaluate(config, checkpoints, suites):
    started = time.monotonic()
    p = _paths(config)
    for suite in suites:
        if suite not in SUITES:
            raise ConfigError(f"unknown suite {suite!r}; valid: {', '.join(SUITES)}")
    if not suites:
        return []
    _require(p["manifest"], "gandet generate-data")
    manifest = load_manifest(p["manifest"])
    images, labels = materialize_split(manifest, "test")
    gts = {i: labels[i] for i in range(len(labels))}
    det_cfg, models, digests = _load_models(config, checkpoints)
    kw = _predict_kw(config)
    meta = {"config_hash": config.hash()}
    for name, digest in digests.items():
        meta[f"checkpoint_{name}"] = digest

    artifacts = []

    def emit(suite, payload, text):
        jpath = os.path.join(p["reports"], f"{suite}.json")
        tpath = os.path.join(p["reports"], f"{suite}.txt")
        write_json_report({"suite": suite, "meta": meta, "data": payload}, jpath)
        atomic_write_text(text, tpath)
        artifacts.extend([jpath, tpath])

    for suite in suites:
        if suite == "table3":
            fams = config.eval_families()
            cols = list(models)
            rows = []
            payload = {}
            for fam in fams:
                pool = config.pool(fam)
                work = _distorted_copy(images, pool, config["eval_seed"], f"t3-{fam}")
                cells = []
                for name in cols:
                    dets = metrics.predict_split(models[name], det_cfg, work, **kw)
                    _, m = metrics.voc_ap(dets, gts, det_cfg.num_classes)
                    cells.append(m)
                rows.append([fam] + cells)
                payload[fam] = dict(zip(cols, cells))
            emit(suite, payload,
                 render_table("mAP on distorted test split (random levels)",
                              cols, rows, meta))

        elif suite == "table6":
            fam = config["pool_family"]
            if fam not in ("gaussian", "defocus"):
                fam = "defocus"
            payload = {}
            rows = []
            for name in models:
                sweep = metrics.per_level_sweep(models[name], det_cfg, images, labels,
                                                fam, **kw)
                payload[name] = {str(r): v for r, v in sweep.items()}
                rows.append([name] + [sweep[r] for r in sorted(sweep)])
            levels = sorted(int(r) for r in next(iter(payload.values())))
            emit(suite, payload,
                 render_table(f"mAP per {fam} blur level",
                              [f"r={r}" for r in levels], rows, meta))
            png = os.path.join(p["reports"], "table6.png")
            plot_sweep({n: {int(r): v for r, v in payload[n].items()} for n in payload},
                       png, title=f"{fam} blur sweep")
            artifacts.append(png)

        elif suite == "losses":
            payload = {}
            rows = []
            for name in models:
                clean = metrics.loss_decomposition(models[name], det_cfg, images, labels,
                                                   None, config["eval_seed"])
                entries = {"none": clean.to_dict()}
                rows.append([f"{name}/none", clean.mean_l_class, clean.mean_l_bb])
                for fam in config.eval_families():
                    br = metrics.loss_decomposition(models[name], det_cfg, images, labels,
                                                    config.pool(fam), config["eval_seed"])
                    entries[fam] = br.to_dict()
                    rows.append([f"{name}/{fam}", br.mean_l_class, br.mean_l_bb])
                payload[name] = entries
            text_rows = [[r[0], f"{r[1]:.4f}".rjust(10), f"{r[2]:.4f}".rjust(10)]
                         for r in rows]
            text = render_table("loss decomposition (mean L_class/N, L_bb/N)",
                                ["   L_class", "      L_bb"],
                                text_rows, meta)
            emit(suite, payload, text)

        elif suite == "cross":
            fams = config.eval_families()
            matrix = metrics.cross_distortion_matrix(
                models, fams, det_cfg, images, labels, config["eval_seed"],
                pools={f: config.pool(f) for f in fams}, **kw)
            rows = [[name] + [matrix[name][f] for f in fams] for name in matrix]
            emit(suite, matrix,
                 render_table("cross-distortion mAP (rows: models, cols: tested on)",
                              fams, rows, meta))

        elif suite == "coco":
            payload = {}
            rows = []
            pool = config.pool()
            work = _distorted_copy(images, pool, config["eval_seed"], "coco")
            for name in models:
                for split_name, imgs in (("clean", images), ("distorted", work)):
                    dets = metrics.predict_split(models[name], det_cfg, imgs, **kw)
                    rep = metrics.coco_ap(dets, gts, det_cfg.num_classes,
                                          det_cfg.image_size)
                    payload[f"{name}/{split_name}"] = rep.to_dict()
                    rows.append([f"{name}/{split_name}", rep.map_avg, rep.map50,
                                 rep.ap75, rep.ap_small, rep.ap_medium, rep.ap_large])
            emit(suite, payload,
                 render_table("COCO-style AP",
                              ["   avg", "  ap50", "  ap75", " small", "medium", " large"],
                              rows, meta))

    append_run_record(p["ledger"], make_run_record(
        config, f"evaluate --suite {','.join(suites)}", artifacts,
        time.monotonic() - started))
    return artifacts


# -------------------------------------------------------------- distort ---
def cmd_distort(config, input_dir, family, level, seed, output_dir):
    started = time.monotonic()
    pool = config.pool(family)
    if not 1 <= level <= pool.J:
        raise ConfigError(
            f"level {level} out of range for family {family!r}: valid levels are 1..{pool.J}")
    files = sorted(glob.glob(os.path.join(input_dir, "*.png")))
    if not files:
        raise ConfigError(f"no .png images found under {input_dir}")
    os.makedirs(output_dir, exist_ok=True)
    sidecar = []
    outputs = []
    for i, src in enumerate(files):
        img = load_image_png(src)
        rng = substream(seed, "distort", i)
        out = pool.apply(img, level, rng)
        dst = os.path.join(output_dir, os.path.basename(src))
        save_image_png(out, dst)
        outputs.append(dst)
        sidecar.append({"source": os.path.basename(src), "is_clean": False,
                        "family": family, "level_index": level})
    side_path = os.path.join(output_dir, "quality_tags.jsonl")
    atomic_write_text("".join(json.dumps(r) + "\n" for r in sidecar), side_path)
    p = _paths(config)
    append_run_record(p["ledger"], make_run_record(
        config, f"distort --family {family} --level {level}", outputs + [side_path],
        time.monotonic() - started))
    return outputs


# --------------------------------------------------------------- report ---
def cmd_report(config, suites=None):
    """Re-render text tables (and the sweep plot) from stored JSON reports."""
    p = _paths(config)
    suites = suites or [os.path.splitext(os.path.basename(f))[0]
                        for f in sorted(glob.glob(os.path.join(p["reports"], "*.json")))]
    rendered = []
    for suite in suites:
        jpath = os.path.join(p["reports"], f"{suite}.json")
        _require(jpath, "gandet evaluate")
        with open(jpath) as fh:
            payload = json.load(fh)
        meta = payload["meta"]
        data = payload["data"]
        if suite == "table6":
            models = list(data)
            levels = sorted(int(r) for r in data[models[0]])
            rows = [[n] + [data[n][str(r)] for r in levels] for n in models]
            text = render_table("mAP per blur level", [f"r={r}" for r in levels], rows, meta)
            plot_sweep({n: {int(r): v for r, v in data[n].items()} for n in data},
                       os.path.join(p["reports"], "table6.png"))
        elif suite == "table3":
            fams = list(data)
            cols = list(data[fams[0]])
            rows = [[f] + [data[f][c] for c in cols] for f in fams]
            text = render_table("mAP on distorted test split", cols, rows, meta)
        else:
            text = json.dumps(data, indent=2, sort_keys=True) + "\n"
        tpath = os.path.join(p["reports"], f"{suite}.txt")
        atomic_write_text(text, tpath)
        rendered.append(tpath)
    return rendered


# ----------------------------------------------------------------- main ---
def _add_config_args(sub):
    sub.add_argument("--config", help="flat YAML config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override one config key")


def build_parser():
    ap = argparse.ArgumentParser(prog="gandet",
                                 description="adversarially trained tiny detector")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="render the dataset manifest")
    _add_config_args(g)

    t = sub.add_parser("train", help="train a model")
    _add_config_args(t)
    t.add_argument("--mode", required=True, choices=["baseline", "finetune", "gando"])
    t.add_argument("--baseline", help="baseline checkpoint (finetune/gando modes)")
    t.add_argument("--freeze-after", dest="freeze_after",
                   help="train only layers up to this block (e.g. block3)")

    e = sub.add_parser("evaluate", help="run evaluation suites")
    _add_config_args(e)
    e.add_argument("--suite", action="append", default=[], choices=list(SUITES))
    e.add_argument("--baseline", help="baseline checkpoint path")
    e.add_argument("--finetune", help="fine-tuned checkpoint path")
    e.add_argument("--gando", help="adversarially trained checkpoint path")
    e.add_argument("--model", action="append", default=[], metavar="NAME=PATH",
                   help="extra named checkpoint (cross suite)")

    d = sub.add_parser("distort", help="degrade a directory of png images")
    _add_config_args(d)
    d.add_argument("--input", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--family", required=True)
    d.add_argument("--level", required=True, type=int)
    d.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="re-render tables from stored reports")
    _add_config_args(r)
    r.add_argument("--suite", action="append", default=[])
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        if args.command == "generate-data":
            path = cmd_generate_data(config)
            print(f"manifest written to {path}")
        elif args.command == "train":
            ckpt, log = cmd_train(config, args.mode, args.baseline, args.freeze_after)
            print(f"checkpoint written to {ckpt}\nlog written to {log}")
        elif args.command == "evaluate":
            checkpoints = {}
            for name in ("baseline", "finetune", "gando"):
                if getattr(args, name):
                    checkpoints[name] = getattr(args, name)
            for item in args.model:
                if "=" not in item:
                    raise ConfigError(f"--model expects NAME=PATH, got {item!r}")
                name, path = item.split("=", 1)
                checkpoints[name] = path
            if not checkpoints and args.suite:
                raise ConfigError("evaluate needs at least one checkpoint")
            arts = cmd_evaluate(config, checkpoints, args.suite)
            for a in arts:
                print(a)
        elif args.command == "distort":
            outs = cmd_distort(config, args.input, args.family, args.level,
                               args.seed, args.output)
            print(f"{len(outs)} images written")
        elif args.command == "report":
            for path in cmd_report(config, args.suite or None):
                print(path)
    except GandetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
