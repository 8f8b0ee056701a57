#!/usr/bin/env python3
# Train the GAN-CLS answer generator on a small synthetic set and compare
# against the plain softmax classifier that shares its architecture.

import numpy as np

from vfl.config import RunConfig
from vfl.data import DatasetConfig, generate_dataset
from vfl.experiments import train

data = DatasetConfig(n_records=1500, d_i=16, vocab=32, K=16, n_regions=2, number_answers=4)
base = RunConfig(data=data, arch="full", noise="N2", init="I1", steps=400, pretrain_steps=300,
                 g_hidden=(64, 64, 64), disc_hidden=(64, 32), d_f=32, d_q=16, alpha=0.1,
                 softmax_scores=True)

# a few rows of data: question type, tokens, ten annotators, ground truth
for r in generate_dataset(data)[:3]:
    print(r.question_type, r.question_tokens, "humans", r.human_answers, "gt", r.ground_truth)

runs = {
    "classifier": base.replace(method="g_classifier"),
    "gan, no pretraining": base.replace(method="gan"),
    "gan, G pretrained": base.replace(method="gan", pretrain_g=True),
}
for name, cfg in runs.items():
    result = train(cfg)
    b = result.breakdown
    print(f"{name:22s} all={b.all:5.1f} yes/no={b.yes_no:5.1f} number={b.number:5.1f} "
          f"other={b.other:5.1f}")
    if cfg.method == "gan":
        log = np.array(result.loss_rows)
        print(f"{'':22s} last 50 steps: L_D {log[-50:, 1].mean():.3f}  L_G {log[-50:, 2].mean():.3f}"
              f"  saturated {int(log[:, 3].sum())}")
