#!/usr/bin/env python3
"""Train the small spectral-mixing model on synthetic phantoms and report DSC.

Reproduces the learnability experiment: 16 training phantoms and 4 held-out
phantoms at 16^3, two classes, 500 optimizer steps at lr 0.01 / wd 3e-5.
"""

import argparse
import json
import time

from afnoseg.data_io import PhantomSpec, generate_dataset, make_splits
from afnoseg.model import ModelConfig, SegModel
from afnoseg.training import TrainConfig, mean_foreground_dsc, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--out", type=str, default=None, help="optional JSON report path")
    args = ap.parse_args()

    spec = PhantomSpec(grid=(16, 16, 16), num_classes=2, seed=args.seed)
    ds = generate_dataset(spec, args.samples)
    train_idx, test_idx = make_splits(args.samples, 0.8, args.seed)
    model = SegModel.build(ModelConfig(stage_dims=(8, 16, 32, 64)),
                           seed=args.seed, precision=32)
    cfg = TrainConfig(learning_rate=0.01, weight_decay=3e-5, epochs=10_000,
                      batch_size=2, max_steps=args.steps, seed=args.seed)

    t0 = time.perf_counter()
    report = train(model, [ds.samples[i] for i in train_idx],
                   [ds.samples[i] for i in test_idx], cfg, log_every_step=False)
    elapsed = time.perf_counter() - t0

    result = {
        "steps": report.final["steps"],
        "train_loss": report.final["train_loss"],
        "held_out_dsc": report.final["val_dsc"],
        "seconds": elapsed,
    }
    print(json.dumps(result, indent=1))
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"epochs": report.epochs, **result}, f, indent=1)


if __name__ == "__main__":
    main()
