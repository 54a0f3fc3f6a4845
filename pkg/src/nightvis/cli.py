"""``nightvis`` command line: synthetic data, training, inference, evaluation, attention."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import report as R
from .config import RunConfig, load_config
from .data import (
    ABLATIONS,
    DatasetManifest,
    apply_ablation,
    denormalize_visible,
    load_dataset,
    save_png,
    albedo_to_image,
    write_synthetic,
)
from .errors import CheckpointError, ConfigError, DataError, NightVisError
from .experiment import ModelConfig, build_state, night_split, score
from .flow import ALGORITHM, benchmark_quadrant
from .metrics import CONVENTIONS, mean_report, metrics_table, quadrant_mask
from .nn import Generator, attention_weights
from .training import EpochStats, LossConfig, predict, train_epoch

logger = logging.getLogger("nightvis")

ARM_LABELS = {"combined": "Infrared channels+NWP", "ir_only": "Infrared channels", "nwp_only": "NWP"}
LOG_COLUMNS = ["epoch", "loss_d", "loss_g", "l1", "d_real", "d_fake", "g_updates", "d_updates"]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    (out / "resolved_config.yaml").write_text(cfg.dump())
    handler = logging.FileHandler(out / "run.log", mode="a")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logging.getLogger("nightvis").addHandler(handler)
    return out


def _manifest(cfg: RunConfig) -> DatasetManifest:
    return DatasetManifest.load(cfg.data)


def _training_indices(m: DatasetManifest) -> list[int]:
    for kw in ({"split": "train", "day": True}, {"day": True}):
        idx = m.select(**kw)
        if idx:
            return idx
    return list(range(len(m)))


def _selected_indices(m: DatasetManifest, cfg: RunConfig) -> list[int]:
    split = None if cfg.infer.split == "all" else cfg.infer.split
    flags = {"day": {"day": True}, "night": {"night": True}, "all": {}}[cfg.infer.frames]
    idx = m.select(split=split, **flags)
    if not idx:
        raise DataError(f"no samples match split={cfg.infer.split} frames={cfg.infer.frames}")
    return idx[: cfg.infer.limit] if cfg.infer.limit else idx


def _meta(cfg: RunConfig, m: DatasetManifest) -> dict:
    return {
        "model": dataclasses.asdict(cfg.model),
        "ablate": cfg.train.ablate,
        "channels": m.channel_names,
        "categories": m.categories,
        "grid": [m.rows, m.cols],
    }


def _model_from_meta(meta: dict) -> ModelConfig:
    fields = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["model"].items()}
    return ModelConfig(**fields)


def _check_channels(meta: dict, m: DatasetManifest) -> None:
    if meta.get("channels") != m.channel_names:
        raise ConfigError(
            f"checkpoint was trained on {len(meta.get('channels', []))} channels, "
            f"dataset has {len(m.channel_names)} (or a different order)"
        )


def _load_generator(path: str) -> tuple[Generator, dict, ck.Checkpoint]:
    if not path:
        raise ConfigError("--checkpoint is required for this command")
    ckpt = ck.load_checkpoint(path)
    meta = ckpt.meta
    if "model" not in meta or "channels" not in meta:
        raise CheckpointError(f"{path} lacks model metadata")
    g = Generator(_model_from_meta(meta).generator_config(len(meta["channels"])), seed=0)
    try:
        g.load_state_arrays({k[10:]: v for k, v in ckpt.arrays.items() if k.startswith("generator.")})
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not fit its declared model: {exc}") from None
    return g.eval(), meta, ckpt


def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def _display_channels(m: DatasetManifest, x: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
    """A representative IR plane and the NWP cloud-cover plane of one sample, if present."""
    names, cats = m.channel_names, m.categories
    ir = next((i for i, c in enumerate(cats) if c == "infrared"), None)
    cloud = next((i for i, n in enumerate(names) if "cloud cover" in n.lower()), None)
    return (None if ir is None else x[ir]), (None if cloud is None else x[cloud])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_make_synthetic(cfg: RunConfig) -> int:
    m = write_synthetic(cfg.out, cfg.seed, cfg.synthetic)
    (Path(cfg.out) / "resolved_config.yaml").write_text(cfg.dump())
    n_day = sum(r["day"] for r in m.records)
    n_night = sum(r["night"] for r in m.records)
    print(f"samples\t{len(m)}")
    print(f"grid\t{m.rows}x{m.cols}")
    print(f"channels\t{len(m.channels)}")
    for cat in ("infrared", "nwp_multilevel", "nwp_singlelevel", "noise"):
        print(f"channels.{cat}\t{m.categories.count(cat)}")
    print(f"frames.day\t{n_day}")
    print(f"frames.night\t{n_night}")
    print(f"manifest\t{Path(cfg.out) / 'manifest.json'}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    m = _manifest(cfg)
    out = _prepare_out(cfg)
    loss = LossConfig(cfg.loss.lambda1, cfg.loss.lambda2)
    state = build_state(
        len(m.channels), cfg.model, loss, lr=cfg.optimizer.lr, beta1=cfg.optimizer.beta1,
        beta2=cfg.optimizer.beta2, batch_size=cfg.train.batch_size, seed=cfg.seed,
    )
    state.opt_g.state.eps = state.opt_d.state.eps = cfg.optimizer.eps
    meta = _meta(cfg, m)
    log_path = out / "train_log.tsv"
    history: list[EpochStats] = []
    if cfg.checkpoint:
        ckpt = ck.load_checkpoint(cfg.checkpoint)
        _check_channels(ckpt.meta, m)
        if ckpt.meta.get("model") != json.loads(json.dumps(meta["model"])) or ckpt.meta.get("ablate") != meta["ablate"]:
            raise ConfigError("resumed checkpoint was trained with a different model or ablation")
        ck.restore_state(state, ckpt)
        logger.info("resumed from %s at epoch %d", cfg.checkpoint, state.epoch)

    idx = _training_indices(m)
    ds = load_dataset(m, idx)
    x = apply_ablation(ds.x, ds.categories, cfg.train.ablate)
    logger.info("training on %d frames, %d channels, ablation %s", len(ds), x.shape[1], cfg.train.ablate)

    if not log_path.exists() or not cfg.checkpoint:
        log_path.write_text("\t".join(LOG_COLUMNS) + "\n")
    ckpt_dir = out / "checkpoints"
    while state.epoch < cfg.train.epochs:
        stats = train_epoch(state, x, ds.y)
        history.append(stats)
        with log_path.open("a") as fh:
            row = stats.as_dict()
            fh.write("\t".join(f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c]) for c in LOG_COLUMNS) + "\n")
        print(f"epoch {stats.epoch}\tL_D {stats.loss_d:.4f}\tL_G {stats.loss_g:.4f}\tL1 {stats.l1:.4f}", flush=True)
        every = cfg.train.checkpoint_every
        if every and stats.epoch % every == 0:
            ck.save_checkpoint(ckpt_dir / f"epoch_{stats.epoch:04d}.ckpt", state, meta)
    ck.save_checkpoint(out / "final.ckpt", state, meta)
    if history:
        R.training_figure(out / "training_curves.png", history)
    print(f"checkpoint\t{out / 'final.ckpt'}")
    return 0


def cmd_infer(cfg: RunConfig) -> int:
    g, meta, _ = _load_generator(cfg.checkpoint)
    m = _manifest(cfg)
    _check_channels(meta, m)
    out = _prepare_out(cfg)
    idx = _selected_indices(m, cfg)
    ds = load_dataset(m, idx)
    x = apply_ablation(ds.x, ds.categories, meta.get("ablate", "combined"))
    synth = denormalize_visible(predict(g, x))
    rows = []
    for k, i in enumerate(idx):
        rec = m.records[i]
        stem = f"{i:04d}_{_safe(rec.get('timestamp', str(i)))}"
        save_png(out / "images" / f"{stem}_synthetic.png", albedo_to_image(synth[k]))
        np.ascontiguousarray(synth[k], dtype="<f4").tofile(out / "images" / f"{stem}_synthetic.f32")
        real = denormalize_visible(ds.y[k]) if rec.get("target") else None
        if real is not None:
            save_png(out / "images" / f"{stem}_real.png", albedo_to_image(real))
        ir, cloud = _display_channels(m, ds.x[k])
        R.panel_figure(out / "panels" / f"{stem}.png", real, synth[k], ir, cloud, title=rec.get("timestamp", ""))
        err = float(np.mean(np.abs(real - synth[k]))) if real is not None else float("nan")
        rows.append([i, rec.get("timestamp", ""), int(bool(rec.get("night"))), err])
    R.write_tsv(out / "inference.tsv", ["index", "timestamp", "night", "mae"], rows)
    print(f"inferred\t{len(idx)}")
    print(f"images\t{out / 'images'}")
    return 0


def _night_flow_triples(m: DatasetManifest) -> list[tuple[int, int, int]]:
    """(t0, t1, t2) index triples: the last two day frames and the frame after, per held-out sequence."""
    triples = []
    seqs = sorted({r.get("sequence") for r in m.records if r.get("split") == "test"})
    for s in seqs:
        recs = sorted((r["hour"], i) for i, r in enumerate(m.records) if r.get("sequence") == s)
        hours = [h for h, _ in recs]
        for k in range(2, len(recs)):
            (_, a), (_, b), (_, c) = recs[k - 2], recs[k - 1], recs[k]
            if m.records[a]["day"] and m.records[b]["day"] and not m.records[c]["day"] and hours[k] - hours[k - 2] == 2:
                triples.append((a, b, c))
                break
    return triples


def cmd_evaluate(cfg: RunConfig, checkpoints: list[str]) -> int:
    if not checkpoints:
        raise ConfigError("--checkpoint is required for evaluate")
    m = _manifest(cfg)
    out = _prepare_out(cfg)
    full = load_dataset(m)
    split = night_split(full)
    quadrant = quadrant_mask((m.rows, m.cols), cfg.evaluate.quadrant)
    triples = _night_flow_triples(m)

    direct, region, flow_rows, arm_mae = {}, {}, [], {}
    direct["Persistence (last day frame)"] = score(split.test.y, split.persistence)
    region["Persistence (last day frame)"] = score(split.test.y, split.persistence, mask=quadrant, region=cfg.evaluate.quadrant)
    text = ["# evaluation report", f"dataset = {m.root}", f"night_frames = {len(split.test)}", "[conventions]"]
    text += [f"{k} = {v}" for k, v in CONVENTIONS.items()]
    text += [f"flow_benchmark = {ALGORITHM}", f"quadrant = {cfg.evaluate.quadrant}"]

    for path in checkpoints:
        g, meta, _ = _load_generator(path)
        _check_channels(meta, m)
        mode = meta.get("ablate", "combined")
        label = ARM_LABELS.get(mode, mode)
        if label in direct:
            label = f"{label} ({Path(path).name})"
        x_test = apply_ablation(split.test.x, full.categories, mode)
        pred = predict(g, x_test)
        direct[label] = score(split.test.y, pred)
        region[label] = score(split.test.y, pred, mask=quadrant, region=cfg.evaluate.quadrant)
        arm_mae[label] = direct[label].mae

        reports = []
        for a, b, c in triples:
            xc = apply_ablation(full.x[c : c + 1], full.categories, mode)
            synth = denormalize_visible(predict(g, xc)[0])
            reports.append(
                benchmark_quadrant(
                    denormalize_visible(full.y[a]), denormalize_visible(full.y[b]), synth,
                    quadrant=cfg.evaluate.quadrant, truth_t2=denormalize_visible(full.y[c]), config=cfg.evaluate.flow,
                )
            )
        if reports:
            avg = mean_report(reports)
            flow_rows.append([
                label, avg.mae, avg.rmse, avg.psnr, avg.ssim,
                float(np.mean([r.extra["benchmark_vs_truth_mae"] for r in reports])),
                float(np.mean([r.extra["synth_vs_truth_mae"] for r in reports])),
            ])

        g(x_test)
        att = attention_weights(g, meta["channels"], meta["categories"])
        tag = _safe(mode)
        (out / f"attention_{tag}.txt").write_text(att.to_text())
        R.write_tsv(out / f"attention_{tag}.tsv", ["channel", "category", "weight"], att.channels)
        R.attention_figure(out / f"attention_{tag}.png", att)
        text.append(f"[{label}]")
        text += [f"checkpoint = {path}", f"ablate = {mode}"]
        text += direct[label].to_text().strip().split("\n")

    (out / "metrics.tsv").write_text(metrics_table(direct))
    (out / "metrics_quadrant.tsv").write_text(metrics_table(region))
    R.write_tsv(
        out / "metrics_flow.tsv",
        ["Model input", "Mean MAE", "Mean RMSE", "PSNR", "SSIM", "Benchmark vs truth MAE", "Synthetic vs truth MAE"],
        flow_rows,
    )
    (out / "report.txt").write_text("\n".join(text) + "\n")
    R.ablation_figure(out / "ablation_mae.png", arm_mae)
    sys.stdout.write("# night frames vs ground truth\n" + metrics_table(direct))
    sys.stdout.write(f"# {cfg.evaluate.quadrant} quadrant vs ground truth\n" + metrics_table(region))
    return 0


def cmd_attention_report(cfg: RunConfig) -> int:
    g, meta, _ = _load_generator(cfg.checkpoint)
    m = _manifest(cfg)
    _check_channels(meta, m)
    out = _prepare_out(cfg)
    ds = load_dataset(m, _selected_indices(m, cfg))
    g(apply_ablation(ds.x, ds.categories, meta.get("ablate", "combined")))
    att = attention_weights(g, meta["channels"], meta["categories"])
    (out / "attention.txt").write_text(att.to_text())
    R.write_tsv(out / "attention.tsv", ["channel", "category", "weight"], att.channels)
    R.write_tsv(out / "attention_elements.tsv", ["category", "element", "weight"], att.elements)
    R.attention_figure(out / "attention.png", att)
    sys.stdout.write(att.to_text())
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nightvis", description="Night-time visible imagery synthesis")
    p.add_argument("command", choices=["make-synthetic", "train", "infer", "evaluate", "attention-report"])
    p.add_argument("--config", metavar="PATH", help="YAML run configuration")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--epochs", type=int, metavar="N")
    p.add_argument("--batch", type=int, metavar="N")
    p.add_argument("--ablate", choices=sorted(ABLATIONS), metavar="MODE", help="combined | ir_only | nwp_only")
    p.add_argument("--out", metavar="DIR", help="output directory (dataset directory for make-synthetic)")
    p.add_argument("--checkpoint", metavar="PATH", action="append",
                   help="checkpoint to resume from or evaluate; evaluate accepts several")
    p.add_argument("--data", metavar="DIR", help="dataset directory holding manifest.json")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    logging.getLogger("nightvis").setLevel(logging.INFO)
    checkpoints = args.checkpoint or []
    try:
        cfg = load_config(
            args.config,
            {
                "seed": args.seed,
                "train.epochs": args.epochs,
                "train.batch_size": args.batch,
                "train.ablate": args.ablate,
                "out": args.out,
                "data": args.data,
                "checkpoint": checkpoints[0] if checkpoints else None,
            },
        )
        if args.command == "make-synthetic":
            return cmd_make_synthetic(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "infer":
            return cmd_infer(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, checkpoints or ([cfg.checkpoint] if cfg.checkpoint else []))
        return cmd_attention_report(cfg)
    except NightVisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        for h in list(logging.getLogger("nightvis").handlers):
            if isinstance(h, logging.FileHandler):
                logging.getLogger("nightvis").removeHandler(h)
                h.close()


if __name__ == "__main__":
    sys.exit(main())
