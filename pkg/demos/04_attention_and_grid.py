#!/usr/bin/env python3
# Co-attention over words and image regions, then a small ablation grid
# written to CSV the same way `vfl ablate` does.

import tempfile
from pathlib import Path

import numpy as np

from vfl.config import RunConfig
from vfl.data import DatasetConfig, generate_dataset, to_batch
from vfl.experiments import run_grid, write_results
from vfl.training import train_attention

data = DatasetConfig(n_records=800, d_i=16, vocab=32, K=16, n_regions=4, number_answers=4)
cfg = RunConfig(method="attention", data=data, steps=600, alpha=0.1, d_s=64, attn_hidden=16)
records = generate_dataset(data)

system, log = train_attention(records[:600], cfg)
print("cross-entropy first/last 50 steps:",
      round(np.mean([l for _, l in log[:50]]), 3), round(np.mean([l for _, l in log[-50:]]), 3))

# attention weights for a few held-out questions
words, regions, _ = system.forward(to_batch(records[600:605]))
for r, w, v in zip(records[600:605], words.data, regions.data):
    print(r.question_type, "words", w[:len(r.question_tokens)].round(2), "regions", v.round(2))

grid = [cfg.replace(combiner=c) for c in ("addition", "mcb")] + [cfg.replace(method="autoencoder")]
rows = run_grid(grid, seeds=[0, 1])
out = Path(tempfile.mkdtemp()) / "results.csv"
write_results(rows, out)
print(out.read_text())
