"""Command-line pipeline: simulate, fit, eval, score.

Every command echoes its fully resolved configuration into the output
directory as ``config.json``; a ``--config run.json`` file provides defaults
that explicit flags override. Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation as evl
from .events import (
    EventList,
    interval_counts,
    parse_events,
    split_edges,
    write_events_csv,
    write_nodes_csv,
)
from .inference import (
    Hyperparams,
    fit,
    load_model,
    save_model,
    write_embeddings_csv,
    write_loss_csv,
)
from .simulate import default_sbm_spec, sbm_generate, write_labels_csv

_SIM_DEFAULTS = {
    "n": 60,
    "intra_rate": 8.0,
    "inter_rate": 0.3,
    "seed": 0,
}

_FIT_DEFAULTS = {
    "d": 2,
    "K": 15,
    "tau": 1.0,
    "tau0": None,
    "epochs": 500,
    "lr_phi": 0.01,
    "lr_beta": 1e-5,
    "riemann_r": 10,
    "rate_model": "euclidean",
    "negatives": None,
    "batch": None,
    "mc_samples": 1,
    "seed": 0,
    "beta_init": None,
    "directed": False,
    "test_frac": 0.0,
    "val_frac": 0.0,
    "split_seed": 0,
    "threads": 1,
    "strict_deterministic": False,
}

_EVAL_DEFAULTS = {
    "scorers": "tgne,lsdm,pa,random",
    "B": 200,
    "seed": 0,
    "directed": False,
    "test_frac": 0.1,
    "val_frac": 0.0,
    "split_seed": 0,
    "lsdm_iters": 800,
    "lsdm_lr": 0.05,
    "threads": 1,
    "strict_deterministic": False,
}

_SCORE_DEFAULTS = {"scorer": "tgne", "B": 200, "seed": 0}


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge built-in defaults, config-file values, and explicit flags."""
    config = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as handle:
            config = json.load(handle)
        if not isinstance(config, dict):
            raise ValueError("--config must contain a JSON object")
    resolved = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key, default)
        resolved[key] = value
    for key in vars(args):
        if key not in resolved and key not in ("func", "config"):
            resolved[key] = getattr(args, key)
    return resolved


def _echo_config(resolved: dict, outdir: Path) -> None:
    payload = {k: v for k, v in resolved.items()}
    for key, value in payload.items():
        if isinstance(value, Path):
            payload[key] = str(value)
    with open(outdir / "config.json", "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)


def _effective_threads(resolved: dict) -> int:
    if resolved.get("strict_deterministic"):
        return 1
    return max(1, int(resolved.get("threads", 1)))


def cmd_simulate(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _SIM_DEFAULTS)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = default_sbm_spec(
        n=int(resolved["n"]),
        intra_rate=float(resolved["intra_rate"]),
        inter_rate=float(resolved["inter_rate"]),
        seed=int(resolved["seed"]),
    )
    sample = sbm_generate(spec)
    write_events_csv(sample.events, outdir / "events.csv")
    write_labels_csv(sample, outdir / "labels.csv")
    _echo_config(resolved, outdir)
    print(
        f"wrote {sample.events.m} events over {spec.n} nodes "
        f"({len(sample.events.unique_pairs())} unique pairs) to {outdir}"
    )
    return 0


def _load_events(resolved: dict, path: str) -> EventList:
    return parse_events(path, directed=bool(resolved["directed"]))


def _make_split(ev: EventList, resolved: dict):
    test_frac = float(resolved["test_frac"])
    val_frac = float(resolved["val_frac"])
    if test_frac == 0.0 and val_frac == 0.0:
        return None
    return split_edges(ev, test_frac, val_frac, seed=int(resolved["split_seed"]))


def cmd_fit(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _FIT_DEFAULTS)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ev = _load_events(resolved, args.events)
    split = _make_split(ev, resolved)
    hp = Hyperparams(
        d=int(resolved["d"]),
        K=int(resolved["K"]),
        tau=float(resolved["tau"]),
        tau0=None if resolved["tau0"] is None else float(resolved["tau0"]),
        epochs=int(resolved["epochs"]),
        lr_phi=float(resolved["lr_phi"]),
        lr_beta=float(resolved["lr_beta"]),
        riemann_r=int(resolved["riemann_r"]),
        rate_model=str(resolved["rate_model"]),
        negatives_per_node=None if resolved["negatives"] is None else int(resolved["negatives"]),
        batch_size=None if resolved["batch"] is None else int(resolved["batch"]),
        mc_samples=int(resolved["mc_samples"]),
        seed=int(resolved["seed"]),
        beta_init=None if resolved["beta_init"] is None else float(resolved["beta_init"]),
    )
    fm = fit(ev, hp, split=split, threads=_effective_threads(resolved))
    save_model(fm, outdir / "model.json")
    write_loss_csv(fm, outdir / "loss.csv")
    write_embeddings_csv(fm, outdir / "embeddings.csv")
    write_nodes_csv(ev, outdir / "nodes.csv")
    resolved["events"] = str(args.events)
    _echo_config(resolved, outdir)
    print(
        f"fit {ev.n} nodes / {ev.m} events for {hp.epochs} epochs: "
        f"loss {fm.loss_trace[0]:.4f} -> {fm.loss_trace[-1]:.4f}"
    )
    return 0


def _write_instances_csv(path, rows, scorers):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["split", "i", "j", "k", "label"] + [f"score_{s}" for s in scorers])
        for row in rows:
            writer.writerow(row)


def cmd_eval(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _EVAL_DEFAULTS)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    fm = load_model(args.model)
    ev = _load_events(resolved, args.events)
    if ev.n != fm.state.n:
        raise ValueError(
            f"model has {fm.state.n} nodes but events have {ev.n}; "
            "fit and eval must use the same dataset"
        )
    part = fm.part
    split = _make_split(ev, resolved)
    counts = interval_counts(ev, part)
    scorers = [s.strip() for s in str(resolved["scorers"]).split(",") if s.strip()]
    B = int(resolved["B"])
    seed = int(resolved["seed"])
    rng = np.random.SeedSequence(seed)

    train_pairs = split.train if split is not None else frozenset(ev.unique_pairs())
    train_counts = evl.restrict_counts(counts, train_pairs)
    lsdm_models = None
    if "lsdm" in scorers:
        opts = evl.LsdmOpts(
            iters=int(resolved["lsdm_iters"]), lr=float(resolved["lsdm_lr"]), seed=seed
        )
        lsdm_models = {
            k: evl.fit_lsdm(train_counts, train_pairs, k, fm.state.d, opts)
            for k in range(1, part.K + 1)
        }

    split_sets = {"train": train_pairs}
    if split is not None:
        if split.val:
            split_sets["val"] = split.val
        if split.test:
            split_sets["test"] = split.test

    auc_out: dict[str, dict[str, float]] = {}
    shortfall_out: dict[str, int] = {}
    instance_rows = []
    inst_seeds = rng.spawn(len(split_sets))
    for (name, pairs), sseq in zip(split_sets.items(), inst_seeds):
        child = np.random.default_rng(sseq)
        instances, shortfall = evl.build_instances(
            counts, pairs, part, seed=int(child.integers(2**63))
        )
        shortfall_out[name] = sum(shortfall.values())
        per_scorer = {}
        scored_lists = {}
        for scorer in scorers:
            scored = evl.score_instances(
                instances,
                scorer,
                fm=fm,
                train_counts=train_counts,
                lsdm_models=lsdm_models,
                seed=int(child.integers(2**63)),
                B=B,
            )
            scored_lists[scorer] = scored
            per_scorer[scorer] = evl.auc(scored)
        auc_out[name] = per_scorer
        for idx, inst in enumerate(instances):
            row = [name, inst.i, inst.j, inst.k, inst.label]
            row += [repr(scored_lists[s][idx].score) for s in scorers]
            instance_rows.append(row)

    with open(outdir / "auc.json", "w", encoding="utf-8") as handle:
        json.dump(
            {
                "dataset": str(args.events),
                "K": part.K,
                "auc": auc_out,
                "shortfall": shortfall_out,
            },
            handle,
            indent=2,
            sort_keys=True,
        )
    _write_instances_csv(outdir / "instances.csv", instance_rows, scorers)

    # node-level uncertainty table
    with open(outdir / "uncertainty_nodes.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["node", "k", "u", "neighbor_dist", "degree"])
        for i in range(ev.n):
            for k in range(1, part.K + 1):
                u = evl.node_uncertainty(fm.state, i, k)
                nd = evl.neighbor_distance(fm, counts, i, k)
                writer.writerow(
                    [i, k, repr(u), "" if nd is None else repr(nd), counts.degree(i, k)]
                )

    # edge-level posterior-predictive uncertainty over the training pairs
    pairs = sorted(train_counts.active_pairs())
    if pairs:
        P, K = len(pairs), part.K
        ii = np.asarray([p[0] for p in pairs]).repeat(K)
        jj = np.asarray([p[1] for p in pairs]).repeat(K)
        kk0 = np.tile(np.arange(K), P)
        mean, std = evl._posterior_lambda_draws(
            fm.state, fm.hyper.rate_model, part, ii, jj, kk0, B, seed,
            fm.hyper.riemann_r,
        )
        with open(outdir / "uncertainty_edges.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["i", "j", "k", "N", "lambda_mean", "lambda_std"])
            for a, b, k0, mn, sd in zip(ii, jj, kk0, mean, std):
                writer.writerow(
                    [int(a), int(b), int(k0) + 1, counts.count(int(a), int(b), int(k0) + 1),
                     repr(float(mn)), repr(float(sd))]
                )

    records = evl.rate_vs_uncertainty_table(
        ev, fm.state, fm.hyper.rate_model, part, B=B, seed=seed
    )
    with open(outdir / "rate_vs_uncertainty.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["i", "j", "t", "k", "is_negative", "rate", "rate_std", "N"])
        for rec in records:
            writer.writerow(
                [rec.i, rec.j, repr(rec.t), rec.k, int(rec.is_negative),
                 repr(rec.rate), repr(rec.rate_std), rec.n_events]
            )

    resolved["events"] = str(args.events)
    resolved["model"] = str(args.model)
    _echo_config(resolved, outdir)
    for name, per_scorer in auc_out.items():
        summary = ", ".join(f"{s}={v:.3f}" for s, v in per_scorer.items())
        print(f"AUC [{name}]: {summary}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    resolved = _resolve(args, _SCORE_DEFAULTS)
    fm = load_model(args.model)
    scorer = str(resolved["scorer"])
    if scorer not in ("tgne", "tgne_predictive"):
        raise ValueError("score supports the model-based scorers: tgne, tgne_predictive")
    triplets = []
    with open(args.triplets, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise ValueError("triplets file is empty")
        for row in reader:
            if not row:
                continue
            i, j, k = (int(x) for x in row[:3])
            triplets.append((i, j, k))
    if not triplets:
        raise ValueError("no triplets to score")
    ii = np.asarray([t[0] for t in triplets])
    jj = np.asarray([t[1] for t in triplets])
    kk = np.asarray([t[2] for t in triplets])
    if scorer == "tgne":
        scores = evl.score_tgne_many(fm, ii, jj, kk)
    else:
        scores, _ = evl._posterior_lambda_draws(
            fm.state, fm.hyper.rate_model, fm.part, ii, jj, kk - 1,
            int(resolved["B"]), int(resolved["seed"]), fm.hyper.riemann_r,
        )
    out_path = Path(args.out)
    with open(out_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["i", "j", "k", "score"])
        for (i, j, k), sc in zip(triplets, scores):
            writer.writerow([i, j, k, repr(float(sc))])
    print(f"scored {len(triplets)} triplets with {scorer} -> {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tgne",
        description="Latent Gaussian trajectories for continuous-time interaction networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate the block-model fixture")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--config", help="JSON file with default flag values")
    p_sim.add_argument("--n", type=int)
    p_sim.add_argument("--intra-rate", dest="intra_rate", type=float)
    p_sim.add_argument("--inter-rate", dest="inter_rate", type=float)
    p_sim.add_argument("--seed", type=int)
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit latent trajectories to an event file")
    p_fit.add_argument("--events", required=True, help="events.csv (source,dest,timestamp)")
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--config", help="JSON file with default flag values")
    p_fit.add_argument("--d", type=int)
    p_fit.add_argument("--K", type=int)
    p_fit.add_argument("--tau", type=float)
    p_fit.add_argument("--tau0", type=float)
    p_fit.add_argument("--epochs", type=int)
    p_fit.add_argument("--lr-phi", dest="lr_phi", type=float)
    p_fit.add_argument("--lr-beta", dest="lr_beta", type=float)
    p_fit.add_argument("--riemann-r", dest="riemann_r", type=int)
    p_fit.add_argument("--rate-model", dest="rate_model", choices=["euclidean", "dot"])
    p_fit.add_argument("--negatives", type=int, help="negative samples per node per epoch")
    p_fit.add_argument("--batch", type=int, help="node batch size per epoch")
    p_fit.add_argument("--mc-samples", dest="mc_samples", type=int)
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument(
        "--beta-init", dest="beta_init", type=float,
        help="rate bias start value (default: empirical log rate per active pair)",
    )
    p_fit.add_argument("--directed", action=argparse.BooleanOptionalAction)
    p_fit.add_argument("--test-frac", dest="test_frac", type=float)
    p_fit.add_argument("--val-frac", dest="val_frac", type=float)
    p_fit.add_argument("--split-seed", dest="split_seed", type=int)
    p_fit.add_argument("--threads", type=int)
    p_fit.add_argument(
        "--strict-deterministic", dest="strict_deterministic",
        action=argparse.BooleanOptionalAction,
    )
    p_fit.set_defaults(func=cmd_fit)

    p_eval = sub.add_parser("eval", help="reconstruction benchmark + uncertainty tables")
    p_eval.add_argument("--events", required=True)
    p_eval.add_argument("--model", required=True, help="model.json from fit")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--config", help="JSON file with default flag values")
    p_eval.add_argument("--scorers", help="comma-separated: tgne,tgne_predictive,lsdm,pa,random")
    p_eval.add_argument("--B", type=int, help="posterior draws for predictive uncertainty")
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--directed", action=argparse.BooleanOptionalAction)
    p_eval.add_argument("--test-frac", dest="test_frac", type=float)
    p_eval.add_argument("--val-frac", dest="val_frac", type=float)
    p_eval.add_argument("--split-seed", dest="split_seed", type=int)
    p_eval.add_argument("--lsdm-iters", dest="lsdm_iters", type=int)
    p_eval.add_argument("--lsdm-lr", dest="lsdm_lr", type=float)
    p_eval.add_argument("--threads", type=int)
    p_eval.add_argument(
        "--strict-deterministic", dest="strict_deterministic",
        action=argparse.BooleanOptionalAction,
    )
    p_eval.set_defaults(func=cmd_eval)

    p_score = sub.add_parser("score", help="score explicit (i,j,k) triplets with a fitted model")
    p_score.add_argument("--model", required=True)
    p_score.add_argument("--triplets", required=True, help="CSV with header i,j,k")
    p_score.add_argument("--out", required=True, help="output CSV path")
    p_score.add_argument("--config", help="JSON file with default flag values")
    p_score.add_argument("--scorer", choices=["tgne", "tgne_predictive"])
    p_score.add_argument("--B", type=int)
    p_score.add_argument("--seed", type=int)
    p_score.set_defaults(func=cmd_score)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures exit 1; argparse handles usage (2)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
