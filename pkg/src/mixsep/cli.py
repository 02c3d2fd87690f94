"""Command-line front end: ``mixsep <stage> [--config FILE] [--key value ...]``.

Every RunConfig key is also a flag; the resolved config is built from the
defaults, then the ``--config`` file, then explicit flags.  Failures exit
nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import pipeline as pl
from .audio import Waveform, save_wav
from .corpus import synth_corpus, write_corpus
from .labels import save_codebook, write_units
from .optim import load_checkpoint, save_checkpoint
from .rundir import RunDir, dumps

STAGES = ("make-corpus", "build-labels", "simulate", "pretrain", "finetune", "probe-sd", "eval", "gradcheck",
          "ablate")


class _Parser(argparse.ArgumentParser):
    """Usage errors are reported as JSON like every other failure."""

    def error(self, message):
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message, "stage": self.prog}) + "\n")
        sys.exit(2)


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run config (mirrors the key=value file)")
    g.add_argument("--config", help="key=value config file")
    for key in pl.CONFIG_KEYS:
        names = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        g.add_argument(*names, dest=f"cfg_{key}", default=None, metavar=key.upper())


def resolve_config(args) -> pl.RunConfig:
    cfg = pl.load_config(args.config) if args.config else pl.RunConfig()
    lines = [f"{key}={getattr(args, 'cfg_' + key)}" for key in pl.CONFIG_KEYS
             if getattr(args, "cfg_" + key, None) is not None]
    return pl.parse_config("\n".join(lines), base=cfg)


def _need(cfg: pl.RunConfig, *keys: str) -> None:
    for key in keys:
        if not getattr(cfg, key):
            raise pl.ConfigError(f"missing required setting: {key}")


def _emit(obj) -> None:
    print(dumps(obj))


# ---------------------------------------------------------------------------
# stages


def cmd_make_corpus(args, cfg):
    _need(cfg, "out")
    if args.n_utts is not None:
        utts = synth_corpus(n_utts=args.n_utts, seed=cfg.seed, prefix=args.prefix)
    else:
        utts = synth_corpus(seconds=args.seconds, seed=cfg.seed, prefix=args.prefix)
    manifest = write_corpus(utts, cfg.out)
    _emit({"manifest": str(manifest), "utterances": len(utts),
           "seconds": sum(u.samples.size for u in utts) / 16000})


def cmd_build_labels(args, cfg):
    _need(cfg, "manifest", "out")
    run = RunDir(cfg.out)
    items = pl.items_from_manifest(cfg.manifest)
    params = mcfg = None
    if args.checkpoint:
        params, mcfg = load_checkpoint(args.checkpoint), cfg.model_config
    cb, units = pl.build_labels(items, cfg.C, cfg.seed, params, mcfg, args.layer)
    save_codebook(run.path / "codebook.bin", cb)
    write_units(run.path / "units.txt", units)
    run.write_config(cfg.replace(units=str(run.path / "units.txt")))
    _emit({"codebook": str(run.path / "codebook.bin"), "units": str(run.path / "units.txt"), "C": cb.C,
           "features": cb.feature_meta, "final_inertia": cb.inertia_history[-1]})


def cmd_simulate(args, cfg):
    _need(cfg, "manifest", "units", "out")
    run = RunDir(cfg.out, cfg)
    items = pl.items_from_manifest(cfg.manifest, cfg.units)
    mixtures = pl.simulate_corpus(items, cfg, args.count)
    (run.path / "wav").mkdir(exist_ok=True)
    (run.path / "targets").mkdir(exist_ok=True)
    run.reset("provenance.jsonl")
    for i, m in enumerate(mixtures):
        save_wav(run.path / "wav" / f"mix{i:06d}.wav", Waveform(m.y_mix.samples))
        write_units(run.path / "targets" / f"mix{i:06d}.txt", m.targets)
        run.append("provenance.jsonl", {"id": f"mix{i:06d}", **m.record()})
    summary = pl.mixture_summary(mixtures, cfg.K)
    run.write_json("summary.json", summary)
    _emit(summary)


def cmd_pretrain(args, cfg):
    _need(cfg, "manifest", "units", "out")
    run = RunDir(cfg.out, cfg)
    items = pl.items_from_manifest(cfg.manifest, cfg.units)
    params, start = None, 0
    if args.resume:
        params = load_checkpoint(args.resume)
        start = params.step
    else:
        run.reset("metrics.jsonl", "provenance.jsonl")

    def on_step(log):
        if log.step % cfg.log_every == 0 or log.step + 1 == cfg.total_steps:
            run.append("metrics.jsonl", log.as_dict())

    def on_ckpt(step, p):
        run.save(p, step)

    params, logs = pl.pretrain(items, cfg, params, start_step=start, steps=args.steps, on_step=on_step,
                               on_checkpoint=on_ckpt)
    if args.provenance:
        for step in range(start, start + len(logs)):
            batch = pl.pretrain_batch(items, cfg, step, cfg.C)
            run.append("provenance.jsonl", {"step": step, "mixtures": [m.record() for m in batch.mixtures]})
    final = run.save(params, "final")
    _emit({"checkpoint": str(final), "steps": len(logs), "first_loss": logs[0].loss if logs else None,
           "last_loss": logs[-1].loss if logs else None})


def cmd_finetune(args, cfg):
    _need(cfg, "manifest", "out")
    run = RunDir(cfg.out, cfg)
    run.reset("metrics.jsonl")
    items = pl.items_from_manifest(cfg.manifest)
    dev = pl.items_from_manifest(cfg.dev_manifest) if cfg.dev_manifest else None
    params = load_checkpoint(args.checkpoint)
    batch_size = 4
    epoch_steps = max(1, math.ceil(len(items) / batch_size))

    def on_step(step, loss):
        if step % cfg.log_every == 0:
            run.append("metrics.jsonl", {"step": step, "pit_ctc_loss": loss})

    def on_epoch(epoch, p):
        if dev is not None:
            _, agg = pl.eval_msasr(p, cfg, dev, n=min(args.dev_n, len(dev)))
            run.append("metrics.jsonl", {"epoch": epoch, "dev_pit_wer": agg["pit_wer"]})

    params, losses = pl.finetune(params, cfg, items, steps=args.steps, on_step=on_step, batch_size=batch_size,
                                 epoch_steps=epoch_steps, on_epoch=on_epoch)
    final = run.save(params, "final")
    _emit({"checkpoint": str(final), "steps": len(losses), "first_loss": losses[0], "last_loss": losses[-1]})


def cmd_probe_sd(args, cfg):
    _need(cfg, "manifest", "out")
    run = RunDir(cfg.out, cfg)
    items = pl.items_from_manifest(cfg.manifest)
    dev = pl.items_from_manifest(cfg.dev_manifest) if cfg.dev_manifest else items
    params = load_checkpoint(args.checkpoint)
    before = params.snapshot()
    probe, losses = pl.train_probe(params, cfg, items, steps=args.steps)
    if any(not np.array_equal(before[n], params[n].data) for n in before):
        raise AssertionError("encoder changed while training the probe")
    save_checkpoint(run.path / "probe.bin", probe)
    rows, agg = pl.eval_sd(params, probe, cfg, dev, n=min(args.n, len(dev)))
    run.reset("per_utt.jsonl")
    for r in rows:
        run.append("per_utt.jsonl", r)
    run.write_json("metrics.json", {**agg, "probe_first_loss": losses[0], "probe_last_loss": losses[-1]})
    _emit({"probe": str(run.path / "probe.bin"), **agg})


def cmd_eval(args, cfg):
    _need(cfg, "out")
    manifest = cfg.dev_manifest or cfg.manifest
    _need(cfg.replace(manifest=manifest), "manifest")
    run = RunDir(cfg.out, cfg)
    items = pl.items_from_manifest(manifest)
    params = load_checkpoint(args.checkpoint)
    n = min(args.n, len(items))
    if args.task in ("msasr", "asr"):
        if "ctc0.w" not in params:
            raise ValueError("checkpoint has no character heads; run finetune first")
        if args.task == "msasr":
            rows, agg = pl.eval_msasr(params, cfg, items, n=n)
        else:
            rows, agg = pl.eval_asr(params, cfg, items, n=n)
    else:
        if not args.probe:
            raise ValueError("--probe is required for task sd")
        rows, agg = pl.eval_sd(params, load_checkpoint(args.probe), cfg, items, n=n)
    run.reset("per_utt.jsonl")
    for r in rows:
        run.append("per_utt.jsonl", r)
    run.write_json("metrics.json", agg)
    _emit(agg)


def cmd_gradcheck(args, cfg):
    report = pl.gradcheck_losses(seed=cfg.seed, epsilon=args.epsilon, n_coords=args.coords)
    ok = all(v["max_rel_error"] < args.tol for v in report.values())
    if cfg.out:
        RunDir(cfg.out, cfg).write_json("gradcheck.json", report)
    _emit({"ok": ok, **report})
    if not ok:
        raise RuntimeError(f"gradient check above tolerance {args.tol}")


def cmd_ablate(args, cfg):
    _need(cfg, "manifest", "units", "out")
    run = RunDir(cfg.out, cfg)
    items = pl.items_from_manifest(cfg.manifest, cfg.units)
    Ks = [int(v) for v in args.Ks.split(",")]
    p_mixes = [float(v) for v in args.p_mixes.split(",")]
    rows = pl.ablation_grid(items, cfg, Ks, p_mixes, steps=args.steps)
    run.reset("grid.jsonl")
    for r in rows:
        run.append("grid.jsonl", r)
    _emit({"cells": len(rows), "grid": str(run.path / "grid.jsonl")})


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixsep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="stage", required=True)

    def stage(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _config_flags(p)
        p.set_defaults(fn=fn)
        return p

    p = stage("make-corpus", cmd_make_corpus, "write a synthetic corpus (WAV + manifest)")
    p.add_argument("--seconds", type=float, default=120.0)
    p.add_argument("--n-utts", type=int, default=None)
    p.add_argument("--prefix", default="utt")

    p = stage("build-labels", cmd_build_labels, "MFCC (or model-layer) k-means units")
    p.add_argument("--checkpoint", help="model checkpoint for second-stage labels")
    p.add_argument("--layer", type=int, default=None, help="1-based encoder layer (default ceil(2L/3))")

    p = stage("simulate", cmd_simulate, "materialize training mixtures")
    p.add_argument("--count", type=int, default=100)

    p = stage("pretrain", cmd_pretrain, "masked pseudo source separation pre-training")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int, default=None, help="stop after this many steps")
    p.add_argument("--provenance", action="store_true", help="log the mixture provenance of every batch")

    p = stage("finetune", cmd_finetune, "PIT-CTC fine-tuning on 2-speaker mixtures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--dev-n", type=int, default=20)

    p = stage("probe-sd", cmd_probe_sd, "diarization probe on frozen layers")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--n", type=int, default=20)

    p = stage("eval", cmd_eval, "PIT-WER, WER or DER on the dev manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("msasr", "asr", "sd"), required=True)
    p.add_argument("--probe")
    p.add_argument("--n", type=int, default=20)

    p = stage("gradcheck", cmd_gradcheck, "finite-difference check of every loss on a tiny model")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)

    p = stage("ablate", cmd_ablate, "pre-training grid over (K, p_mix)")
    p.add_argument("--Ks", default="1,2,3")
    p.add_argument("--p-mixes", default="0,0.2,0.6,1.0")
    p.add_argument("--steps", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args).replace(stage=args.stage)
        args.fn(args, cfg)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "stage": args.stage}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
