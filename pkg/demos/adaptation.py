"""Source-only, naive self-training, mean-teacher self-training and oracle on one seed.

Prints target AP for each and the fraction of the source-to-oracle gap that
each adaptation method closes.  Each method takes 10 to 30 seconds on one core.

    python demos/adaptation.py [--seed 0]
"""
import argparse
import dataclasses
import time

import numpy as np

from monouda.detector import METRIC
from monouda.evalkit import closed_gap
from monouda.harness import evaluate_model, pseudo_counts, score_iou_rows, spearman
from monouda.selftrain import TrainConfig, naive_st, train_oracle, train_source_only, train_stmono3d
from monouda.synthworld import generate_dataset, source_domain, target_domain


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scenes", type=int, default=500)
    args = ap.parse_args()

    s_src, s_tgt, s_test = np.random.SeedSequence(args.seed).spawn(3)
    source = generate_dataset(s_src, source_domain(), args.scenes)
    target = generate_dataset(s_tgt, target_domain(), args.scenes)
    test = generate_dataset(s_test, target_domain(), 300)
    cfg = TrainConfig()

    runs = {
        "source only (metric depth)": lambda rng: train_source_only(
            source, dataclasses.replace(cfg, depth_mode=METRIC, gams=False), rng),
        "source only": lambda rng: train_source_only(source, cfg, rng),
        "naive self-training": lambda rng: naive_st(source, target, cfg, rng),
        "mean-teacher self-training": lambda rng: train_stmono3d(source, target, cfg, rng),
        "oracle (target labels)": lambda rng: train_oracle(target, cfg, rng),
    }
    ap3d, results = {}, {}
    for name, fn in runs.items():
        t0 = time.perf_counter()
        results[name] = fn(np.random.default_rng(args.seed))
        ap3d[name] = evaluate_model(results[name].model, test)["AP40_3D"].ap
        print(f"{name:28s} AP40_3D {ap3d[name]:.3f}   ({time.perf_counter() - t0:.0f}s)")

    lo, hi = ap3d["source only (metric depth)"], ap3d["oracle (target labels)"]
    print("\nclosed gap relative to the metric-depth source model:")
    for name in ("source only", "naive self-training", "mean-teacher self-training"):
        print(f"  {name:28s} {closed_gap(ap3d[name], lo, hi):6.1f}%")

    st = results["mean-teacher self-training"]
    rows = score_iou_rows(st.model, test)
    print(f"\nteacher score vs 3D IoU, Spearman {spearman([r[0] for r in rows], [r[2] for r in rows]):.3f}")
    print("pseudo labels per 100 iterations (last 12 windows):",
          [c for *_, c in pseudo_counts(st.log)][-12:])


if __name__ == "__main__":
    main()
