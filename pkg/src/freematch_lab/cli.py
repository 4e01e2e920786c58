"""Command-line entry point: run experiments from JSON configs, sweep the
mixture theory checks, and run the thresholding/fairness ablation suites.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error. Every
output file is written atomically (temp file + rename), so artifacts are
either complete or absent. FREEMATCH_LAB_THREADS caps ablation workers.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import ndcore as nd
from .adaptive_threshold import Cpl, Fixed, GlobalOnly, LocalOnly, Sat, scheme_from_dict, scheme_to_dict
from .augment import AugmentSpec
from .ssl_losses import FairnessVariant
from .svgplot import boundary_chart, line_chart
from .synthdata import DatasetBundle, MixtureSpec, TwoMoonSpec, gen_gaussian_clusters, gen_two_moons, to_csv
from .theory import PseudoLabelDist, mc_agreement_z, sweep
from .trainer import RunResult, TrainConfig, TrainingAborted, config_from_dict, run


# -- canonical two-moon protocol ------------------------------------------------

# Settings for the barely-supervised two-moon runs: one label per class, 1000
# unlabeled points, 3x64 MLP, 2000 iterations. The batch is the entire labeled
# set and the unlabeled draw is large so the threshold statistics are stable.
TWO_MOON_TRAIN = dict(mu=96, B=2, K=2000, lr0=0.05, eval_every=50)
TWO_MOON_AUGMENT = AugmentSpec(strong_sigma=0.3)


def canonical_two_moon_data(seed: int) -> DatasetBundle:
    return gen_two_moons(TwoMoonSpec(n_unlabeled=1000, labels_per_class=1, noise_sigma=0.1, seed=seed))


def canonical_two_moon_config(scheme, fairness: FairnessVariant, w_f: float, seed: int) -> TrainConfig:
    return TrainConfig(
        scheme=scheme, fairness=fairness, w_f=w_f, seed=seed, augment=TWO_MOON_AUGMENT, **TWO_MOON_TRAIN
    )


# -- experiment config ------------------------------------------------------------


def _reject_unknown(doc: dict, allowed: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")


def build_dataset(doc: dict) -> DatasetBundle:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError("dataset must be an object with a 'kind' key")
    kind = doc["kind"]
    if kind == "two_moons":
        _reject_unknown(doc, {"kind", "n_unlabeled", "labels_per_class", "noise_sigma", "seed"}, "dataset")
        spec = TwoMoonSpec(**{k: v for k, v in doc.items() if k != "kind"})
        return gen_two_moons(spec)
    if kind == "clusters":
        allowed = {"kind", "C", "n_per_class", "means", "sigma", "seed", "labels_per_class", "n_test_per_class"}
        _reject_unknown(doc, allowed, "dataset")
        kwargs = {k: v for k, v in doc.items() if k != "kind"}
        return gen_gaussian_clusters(**kwargs)
    raise ValueError(f"unknown dataset kind {kind!r}")


def parse_experiment_config(doc: dict) -> tuple[DatasetBundle, TrainConfig, str | None]:
    if not isinstance(doc, dict):
        raise ValueError("experiment config must be a JSON object")
    _reject_unknown(doc, {"dataset", "train", "out_dir"}, "experiment config")
    if "dataset" not in doc or "train" not in doc:
        raise ValueError("experiment config needs 'dataset' and 'train' sections")
    data = build_dataset(doc["dataset"])
    config = config_from_dict(doc["train"])
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ValueError("out_dir must be a string")
    return data, config, out_dir


# -- train command ----------------------------------------------------------------


def _emit_plots(result: RunResult, data: DatasetBundle, out_dir: str) -> None:
    all_pts = np.vstack([data.labeled.points, data.unlabeled.points, data.test.points])
    pad = 0.3
    x0, y0 = all_pts.min(axis=0) - pad
    x1, y1 = all_pts.max(axis=0) + pad
    n = 200
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    model = nd.ema_model(result.ema)
    with nd.no_grad():
        pred = nd.forward(model, grid).data.argmax(axis=1).reshape(n, n)
    boundary_chart(
        "decision boundary (EMA model)",
        pred,
        (x0, x1, y0, y1),
        [
            (data.unlabeled.points, "#999999", 1.6),
            (data.labeled.points, "#000000", 5.0),
        ],
        os.path.join(out_dir, "boundary.svg"),
    )
    iters = np.array([r.iteration for r in result.trace])
    line_chart(
        "confidence thresholds",
        [
            ("global", iters, np.array([r.tau_global for r in result.trace])),
            ("mean per-class", iters, np.array([r.mean_class_threshold for r in result.trace])),
        ],
        os.path.join(out_dir, "thresholds.svg"),
    )
    line_chart(
        "sampling rate",
        [("sampling rate", iters, np.array([r.sampling_rate for r in result.trace]))],
        os.path.join(out_dir, "sampling_rate.svg"),
    )


def cmd_train(config_path: str, out_override: str | None) -> int:
    try:
        with open(config_path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        data, config, out_dir = parse_experiment_config(doc)
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = out_override or out_dir
    if out_dir is None:
        print("config error: no output directory (set out_dir or pass --out)", file=sys.stderr)
        return 2
    os.makedirs(out_dir, exist_ok=True)
    try:
        result = run(config, data, out_dir=out_dir)
    except TrainingAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1
    to_csv(data, os.path.join(out_dir, "dataset.csv"))
    _emit_plots(result, data, out_dir)
    print(
        f"done: final_error={result.final_error:.4f} best_error={result.best_error:.4f} "
        f"trace={len(result.trace)} rows -> {out_dir}"
    )
    return 0


# -- theory command ----------------------------------------------------------------


def default_theory_sweeps() -> list[dict]:
    return [
        {
            "name": "utilization_vs_tau",
            "varying": "tau",
            "base": {"mu1": -1.0, "mu2": 1.0, "sigma1": 1.0, "sigma2": 1.0, "beta": 1.0, "tau": 0.8},
            "values": [0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95],
        },
        {
            "name": "mask_vs_delta",
            "varying": "delta",
            "base": {"mu1": -1.0, "mu2": 1.0, "sigma1": 1.0, "sigma2": 1.0, "beta": 1.0, "tau": 0.8},
            "values": [0.5, 1.0, 2.0, 4.0],
        },
        {
            "name": "mask_vs_beta",
            "varying": "beta",
            "base": {"mu1": -1.0, "mu2": 1.0, "sigma1": 1.0, "sigma2": 1.0, "beta": 1.0, "tau": 0.8},
            "values": [0.5, 1.0, 2.0, 4.0],
        },
        {
            # imbalance growth holds in a regime where the masked band still
            # overlaps both components; this grid was checked analytically
            "name": "imbalance_vs_tau",
            "varying": "tau",
            "base": {"mu1": -2.0, "mu2": 2.0, "sigma1": 0.5, "sigma2": 2.0, "beta": 2.0, "tau": 0.8},
            "values": [0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9],
        },
    ]


# the three headline monotonicity claims the sweeps must certify
REQUIRED_VERDICTS = [
    ("utilization_vs_tau", "p_mask_strictly_increasing_in_tau"),
    ("mask_vs_delta", "p_mask_strictly_decreasing_in_delta"),
    ("imbalance_vs_tau", "imbalance_non_decreasing_in_tau"),
]


def _load_sweep_file(path: str) -> list[dict]:
    with open(path) as fh:
        doc = json.load(fh)
    _reject_unknown(doc, {"sweeps"}, "sweep grid")
    sweeps = doc.get("sweeps")
    if not isinstance(sweeps, list) or not sweeps:
        raise ValueError("sweep grid needs a non-empty 'sweeps' list")
    for entry in sweeps:
        _reject_unknown(entry, {"name", "varying", "base", "values"}, "sweep entry")
        for key in ("name", "varying", "base", "values"):
            if key not in entry:
                raise ValueError(f"sweep entry missing {key!r}")
    return sweeps


def cmd_theory(grid_path: str | None, out_dir: str, mc_samples: int, seed: int) -> int:
    try:
        entries = _load_sweep_file(grid_path) if grid_path else default_theory_sweeps()
        results = []
        for entry in entries:
            base = MixtureSpec(**entry["base"])
            results.append((entry["name"], sweep(base, entry["varying"], entry["values"], mc_samples, seed)))
    except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "theorem_sweep.csv")
    tmp = f"{csv_path}.tmp-{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sweep", "varying", "param", "p_pos", "p_neg", "p_mask", "imbalance",
             "mc_p_pos", "mc_se_pos", "mc_p_neg", "mc_se_neg", "mc_p_mask", "mc_se_mask"]
        )
        for name, res in results:
            for row in res.rows:
                mc_cols = [""] * 6
                if row.mc is not None:
                    m = row.mc
                    mc_cols = [
                        f"{m.dist.p_pos:.12g}", f"{m.se_pos:.12g}",
                        f"{m.dist.p_neg:.12g}", f"{m.se_neg:.12g}",
                        f"{m.dist.p_mask:.12g}", f"{m.se_mask:.12g}",
                    ]
                writer.writerow(
                    [name, res.varying, f"{row.param:.12g}", f"{row.p_pos:.12g}", f"{row.p_neg:.12g}",
                     f"{row.p_mask:.12g}", f"{row.imbalance:.12g}", *mc_cols]
                )
    os.replace(tmp, csv_path)

    lines = []
    all_pass = True
    by_name = dict(results)
    for name, res in results:
        for key, ok in res.verdicts.items():
            required = (name, key) in REQUIRED_VERDICTS
            if required:
                all_pass = all_pass and ok
            lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {key}{' [required]' if required else ''}")
    for name, key in REQUIRED_VERDICTS:
        if name not in by_name:
            lines.append(f"SKIP {name}: {key} [required sweep not in grid]")
    if mc_samples > 0:
        worst = 0.0
        n_checked = 0
        for _, res in results:
            for row in res.rows:
                d = PseudoLabelDist(row.p_pos, row.p_neg, row.p_mask)
                worst = max(worst, mc_agreement_z(d, row.mc))
                n_checked += 3
        ok = worst <= 3.0
        all_pass = all_pass and ok
        lines.append(
            f"{'PASS' if ok else 'FAIL'} mc_agreement: max |analytic - mc| / stderr = {worst:.3f} "
            f"over {n_checked} entries (n={mc_samples}, one reroll per flagged point)"
        )
    lines.append(f"overall: {'PASS' if all_pass else 'FAIL'}")
    verdicts_path = os.path.join(out_dir, "verdicts.txt")
    tmp = f"{verdicts_path}.tmp-{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, verdicts_path)
    print("\n".join(lines))
    return 0 if all_pass else 1


# -- ablate command -----------------------------------------------------------------

THRESHOLD_SUITE = [
    ("fixed(0.95)", Fixed(0.95)),
    ("global_only", GlobalOnly()),
    ("local_only(0.95)", LocalOnly(0.95)),
    ("sat", Sat()),
    ("cpl(0.95)", Cpl(0.95)),
]

FAIRNESS_SUITE = [
    ("none", FairnessVariant.NONE, 0.0),
    ("uniform_prior", FairnessVariant.UNIFORM_PRIOR, 0.01),
    ("saf", FairnessVariant.SAF, 0.01),
]


def _ablation_job(job: dict) -> tuple[str, int, float, float]:
    scheme = scheme_from_dict(job["scheme"])
    config = canonical_two_moon_config(scheme, FairnessVariant(job["fairness"]), job["w_f"], job["seed"])
    data = canonical_two_moon_data(job["seed"])
    result = run(config, data)
    return job["variant"], job["seed"], result.final_error, result.best_error


def ablation_jobs(suite: str, seeds: list[int]) -> list[dict]:
    jobs = []
    if suite == "thresholds":
        for label, scheme in THRESHOLD_SUITE:
            for seed in seeds:
                jobs.append(
                    {"variant": label, "scheme": scheme_to_dict(scheme), "fairness": "none", "w_f": 0.0, "seed": seed}
                )
    elif suite == "fairness":
        for label, variant, w_f in FAIRNESS_SUITE:
            for seed in seeds:
                jobs.append(
                    {"variant": label, "scheme": scheme_to_dict(Sat()), "fairness": variant.value, "w_f": w_f, "seed": seed}
                )
    else:
        raise ValueError(f"unknown suite {suite!r} (expected 'thresholds' or 'fairness')")
    return jobs


def run_ablation(suite: str, seeds: list[int], workers: int | None = None) -> dict[str, dict]:
    """Run the suite across seeds; returns per-variant summary statistics."""
    jobs = ablation_jobs(suite, seeds)
    n_workers = workers or int(os.environ.get("FREEMATCH_LAB_THREADS", os.cpu_count() or 1))
    n_workers = max(1, min(n_workers, len(jobs)))
    if n_workers == 1:
        rows = [_ablation_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_ablation_job, jobs))
    rows.sort(key=lambda r: (r[0], r[1]))  # order-independent aggregation
    summary: dict[str, dict] = {}
    for variant, seed, final_error, best_error in rows:
        entry = summary.setdefault(variant, {"finals": [], "bests": [], "seeds": []})
        entry["seeds"].append(seed)
        entry["finals"].append(final_error)
        entry["bests"].append(best_error)
    for entry in summary.values():
        finals = np.array(entry["finals"])
        entry["mean_error"] = float(finals.mean())
        entry["std_error"] = float(finals.std(ddof=1)) if len(finals) > 1 else None
        entry["mean_best_error"] = float(np.mean(entry["bests"]))
    return summary


def cmd_ablate(suite: str, n_seeds: int, out_dir: str) -> int:
    try:
        jobs_check = ablation_jobs(suite, [0])
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    del jobs_check
    if n_seeds < 1:
        print("config error: --seeds must be >= 1", file=sys.stderr)
        return 2
    seeds = list(range(n_seeds))
    try:
        summary = run_ablation(suite, seeds)
    except TrainingAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1
    os.makedirs(out_dir, exist_ok=True)
    order = [label for label, *_ in (THRESHOLD_SUITE if suite == "thresholds" else FAIRNESS_SUITE)]
    csv_path = os.path.join(out_dir, "ablation.csv")
    tmp = f"{csv_path}.tmp-{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "n_seeds", "mean_error", "std_error", "mean_best_error"])
        for label in order:
            e = summary[label]
            std = "" if e["std_error"] is None else f"{e['std_error']:.12g}"
            writer.writerow([label, len(e["seeds"]), f"{e['mean_error']:.12g}", std, f"{e['mean_best_error']:.12g}"])
    os.replace(tmp, csv_path)
    for label in order:
        e = summary[label]
        std = "n/a" if e["std_error"] is None else f"{e['std_error']:.4f}"
        print(f"{label:18s} mean_error={e['mean_error']:.4f} std={std} (n={len(e['seeds'])})")
    print(f"wrote {csv_path}")
    return 0


# -- entry point -------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="freematch-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one experiment from a JSON config")
    p_train.add_argument("--config", required=True, help="experiment config path")
    p_train.add_argument("--out", default=None, help="output directory (overrides config)")

    p_theory = sub.add_parser("theory", help="analytic + Monte-Carlo mixture sweeps")
    p_theory.add_argument("--grid", default=None, help="JSON sweep grid (default: built-in sweeps)")
    p_theory.add_argument("--out", default="theory_out", help="output directory")
    p_theory.add_argument("--mc-samples", type=int, default=100_000, help="MC draws per grid point (0 = analytic only)")
    p_theory.add_argument("--seed", type=int, default=0)

    p_ablate = sub.add_parser("ablate", help="threshold/fairness ablation suites on two moons")
    p_ablate.add_argument("--suite", required=True, help="thresholds or fairness")
    p_ablate.add_argument("--seeds", type=int, default=5)
    p_ablate.add_argument("--out", default="ablation_out", help="output directory")

    args = parser.parse_args(argv)
    if args.command == "train":
        return cmd_train(args.config, args.out)
    if args.command == "theory":
        if args.mc_samples < 0:
            print("config error: --mc-samples must be >= 0", file=sys.stderr)
            return 2
        return cmd_theory(args.grid, args.out, args.mc_samples, args.seed)
    return cmd_ablate(args.suite, args.seeds, args.out)


if __name__ == "__main__":
    raise SystemExit(main())
