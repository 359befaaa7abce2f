"""
Ablation sweep on the reference corpus
======================================

Each switch removes one ingredient:

* ``wei`` scores without any column weights,
* ``pro`` weights columns by the global pseudo-semantic vector, no clustering,
* ``ite`` re-clusters from scratch every epoch instead of blending,
* ``fed`` blends with a fixed weight of one.
"""

import json
import time
from pathlib import Path

from pico import SynthConfig, TrainConfig, fit, generate_corpus
from pico.cli import SYNTH_FIELDS, TRAIN_FIELDS

flat = json.loads((Path(__file__).resolve().parents[1] / "configs" / "reference.json").read_text())
corpus, _ = generate_corpus(SynthConfig(**{k: v for k, v in flat.items() if k in SYNTH_FIELDS}))
train = {k: v for k, v in flat.items() if k in TRAIN_FIELDS}

for ablate in (None, "fed", "ite", "pro", "wei"):
    t0 = time.perf_counter()
    result = fit(TrainConfig(**train, ablate=ablate), corpus)
    print(f"{ablate or 'full':>5}: final rSum {result.final_rsum:6.1f}  best {result.best_rsum:6.1f}  "
          f"({time.perf_counter() - t0:.1f}s)")
