"""End-to-end run at toy scale, in process.

Synthetic corpus -> MFCC k-means units -> masked PIT pre-training ->
PIT-CTC fine-tuning -> PIT-WER, plus a diarization probe -> DER.
Takes about a minute on one core.  Run: python demos/quickstart.py
"""

import math

from mixsep import pipeline as pl
from mixsep.corpus import synth_corpus

utts = synth_corpus(seconds=40, seed=0)
codebook, units = pl.build_labels(utts, C=16, seed=0)
items = pl.make_items(utts, units)
print(f"{len(items)} utterances, codebook inertia {codebook.inertia_history[-1]:.1f}")

cfg = pl.RunConfig(C=16, K=2, d=32, L=2, n_heads=2, total_steps=60, warmup_steps=10, ft_total_steps=40,
                   probe_steps=20, recurrent_width=16)
params, logs = pl.pretrain(items, cfg)
print(f"pre-training loss {logs[0].loss:.3f} -> {logs[-1].loss:.3f} (log vocab {math.log(cfg.C + 1):.3f})")
print(f"masked accuracy on fresh mixtures: {pl.masked_unit_accuracy(params, items, cfg, n_batches=3):.3f}")

tuned, losses = pl.finetune(params.copy(), cfg, items)
print(f"PIT-CTC loss {losses[0]:.1f} -> {losses[-1]:.1f}")
rows, summary = pl.eval_msasr(tuned, cfg, items, n=5)
print(f"PIT-WER on 5 two-speaker mixtures: {summary['pit_wer']:.3f}")
print(f"  ref {rows[0]['refs']}  hyp {rows[0]['hyps']}")

probe, probe_losses = pl.train_probe(params, cfg, items)
_, sd = pl.eval_sd(params, probe, cfg, items, n=5)
print(f"probe BCE {probe_losses[0]:.3f} -> {probe_losses[-1]:.3f}, DER {sd['der']:.3f}")
