#!/usr/bin/env python3
"""Reconstruction benchmark on an event file: fit, then AUC per scorer.

Library-API twin of `tgne fit` + `tgne eval`: splits the interacting pairs,
fits trajectories on the training pairs only, and scores held-out
(pair, interval) instances with every baseline.
"""

import argparse
import json
from pathlib import Path

from tgne.events import interval_counts, parse_events, split_edges
from tgne.evaluation import (
    LsdmOpts,
    auc,
    build_instances,
    fit_lsdm,
    restrict_counts,
    score_instances,
)
from tgne.inference import Hyperparams, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("events", type=Path, help="CSV with header source,dest,timestamp")
    ap.add_argument("--out", type=Path, default=Path("out/reconstruction"))
    ap.add_argument("--K", type=int, default=15)
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--test-frac", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scorers", default="tgne,tgne_predictive,lsdm,pa,random")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    ev = parse_events(args.events)
    print(f"{args.events}: n={ev.n}, events={ev.m}, pairs={len(ev.unique_pairs())}")
    split = split_edges(ev, args.test_frac, 0.0, seed=args.seed)
    hp = Hyperparams(K=args.K, d=args.d, tau=args.tau, epochs=args.epochs, seed=args.seed)
    fm = fit(ev, hp, split=split)

    counts = interval_counts(ev, fm.part)
    train_counts = restrict_counts(counts, split.train)
    scorers = [s.strip() for s in args.scorers.split(",") if s.strip()]
    lsdm_models = None
    if "lsdm" in scorers:
        lsdm_models = {
            k: fit_lsdm(train_counts, split.train, k, args.d, LsdmOpts(seed=args.seed))
            for k in range(1, args.K + 1)
        }

    results = {}
    for name, pairs in (("train", split.train), ("test", split.test)):
        instances, _ = build_instances(counts, pairs, fm.part, seed=args.seed + 1)
        results[name] = {
            scorer: auc(
                score_instances(
                    instances, scorer, fm=fm, train_counts=train_counts,
                    lsdm_models=lsdm_models, seed=args.seed + 2,
                )
            )
            for scorer in scorers
        }
        print(name, {k: round(v, 4) for k, v in results[name].items()})

    with open(args.out / "auc.json", "w") as fh:
        json.dump({"dataset": str(args.events), "K": args.K, "auc": results}, fh, indent=2)
    print(f"wrote {args.out}/auc.json")


if __name__ == "__main__":
    main()
