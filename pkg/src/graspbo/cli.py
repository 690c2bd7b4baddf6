"""Campaign runner: single runs, the arm ablation, metric sweeps, weight derivation.

Every campaign writes one CSV per seed under ``<out>/<label>/``. Reports,
curves and tables are rebuilt from those CSVs alone (``graspbo report``
reproduces them), so nothing in a report depends on in-memory state.

Exit codes: 0 success, 2 configuration error, 3 failed ``--check``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import config as cfgmod
from . import env
from .bo import optimize
from .config import CampaignConfig
from .contact import FrictionModel
from .exceptions import AllZero, ConfigError
from .geom import get_object, object_from_dict
from .gp import GaussianProcessSurrogate
from .hand import HandModel
from .heuristics import ARMS, HeuristicParams
from .metrics import METRIC_NAMES, MetricScaler, MetricWeights

log = logging.getLogger("graspbo")

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3
ABLATION_ORDER = ("gr", "ar", "cp", "simple")
SCORING_RULE = ("best-so-far y_common: normalized epsilon quality of the evaluated grasp "
                "under force closure, 0 otherwise (the y_simple outcome with w2 = 1)")


@dataclass(frozen=True)
class Campaign:
    """One arm/weight combination run over all configured seeds."""

    label: str
    arm: str
    weights: tuple


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def build_scene(cfg: CampaignConfig):
    if isinstance(cfg.object, str):
        obj = get_object(cfg.object)
    else:
        spec = dict(cfg.object)
        obj = object_from_dict(spec.pop("name", "custom"), spec)
    cmap = env.default_capability_map()
    if cfg.capability_threshold != cmap.threshold:
        cmap = cmap.with_threshold(cfg.capability_threshold)
    return env.make_scene(obj, cmap, cfg.table_height), HandModel(**cfg.hand)


def trial_settings(cfg: CampaignConfig, arm: str, weights) -> env.TrialSettings:
    return env.TrialSettings(
        arm=arm, weights=MetricWeights(*weights), params=HeuristicParams(cfg.lam, cfg.alpha),
        noise=env.NoiseConfig(cfg.noise.sigma_pos, cfg.noise.sigma_ang, cfg.noise.sigma_y),
        friction=FrictionModel(cfg.friction.mu, cfg.friction.cone_edges),
        eps_path=cfg.eps_path, volume_samples=cfg.volume_samples,
        pregrasp_offset=cfg.pregrasp_offset)


def calibration_bounds(cfg: CampaignConfig) -> list:
    """Metric ``[min, max]`` rows shared by every arm of a campaign."""
    scene, hand = build_scene(cfg)
    n = cfg.normalization
    scaler = env.calibrate_scaler(scene, hand, trial_settings(cfg, "simple", cfg.weights),
                                  n.calibration_samples, n.calibration_seed, n.mode)
    return [scaler.data_min_.tolist(), scaler.data_max_.tolist()]


def run_seed(cfg: CampaignConfig, campaign: Campaign, seed: int, bounds) -> str:
    """Run one BO campaign and return its CSV text."""
    scene, hand = build_scene(cfg)
    settings = trial_settings(cfg, campaign.arm, campaign.weights)
    bo_rng, trial_rng, success_rng = (np.random.default_rng(s)
                                      for s in np.random.SeedSequence(seed).spawn(3))
    scaler = MetricScaler(mode=cfg.normalization.mode, bounds=bounds).fit(None)
    evaluator = env.GraspEvaluator(scene, hand, settings, scaler, trial_rng)
    g = cfg.gp
    surrogate = GaussianProcessSurrogate(kernel=g.kernel, n_hyper_samples=g.n_hyper_samples,
                                         n_burnin=g.n_burnin, n_warm_burnin=g.n_warm_burnin,
                                         refit_every=g.refit_every)
    done = []
    t0 = time.perf_counter()

    def record_entry(entry):
        rec = entry.record
        if not isinstance(rec, env.EvalRecord):
            rec = env.EvalRecord(env.GraspPose.from_array(entry.x), campaign.arm, q_c=0,
                                 reason="error", eps_path=cfg.eps_path)
        elapsed = 1e3 * (time.perf_counter() - t0) if cfg.timing else None
        done.append((rec, entry.iteration, entry.incumbent, elapsed))

    optimize(evaluator, env.pose_bounds(scene.object, hand, scene.table_height), cfg.n0, cfg.iters,
             bo_rng, surrogate, n_candidates=cfg.acquisition.n_candidates,
             n_starts=cfg.acquisition.n_starts, callback=record_entry)
    # the success proxy is only reported for the seed's best grasp; -1 marks untested rows
    best = int(np.argmax([rec.y for rec, *_ in done]))
    for rec, *_ in done:
        rec.success = -1
    rec = done[best][0]
    rec.success = int(bool(rec.q_f) and env.success_proxy(
        rec, scene, hand, settings, success_rng, k_trials=cfg.success.k_trials,
        min_closure_rate=cfg.success.min_closure_rate, eps_min=cfg.success.eps_min))
    rows = [rec.row(it, inc, el) for rec, it, inc, el in done]
    return format_csv(rows)


def format_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {env.SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(env.CSV_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


def read_csv(path) -> dict:
    """Columns of a history CSV as arrays (strings for ``reason``/``eps_path``)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# schema: {env.SCHEMA_VERSION}":
        raise ValueError(f"{path}: missing or unsupported schema line")
    reader = csv.reader(lines[1:])
    header = next(reader)
    if tuple(header) != env.CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected columns")
    body = list(reader)
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in body]
        if name in ("reason", "eps_path"):
            cols[name] = np.array(vals, dtype=object)
        elif name == "wall_ms":
            cols[name] = np.array([float(v) if v else np.nan for v in vals])
        else:
            cols[name] = np.array(vals, dtype=float)
    return cols


def _seed_path(out: Path, label: str, seed: int) -> Path:
    return out / label / f"seed_{seed:04d}.csv"


def execute(cfg: CampaignConfig, campaigns, out: Path, command: str) -> dict:
    """Run ``campaigns`` x ``cfg.seeds``, write CSVs and the manifest, and return the report."""
    out.mkdir(parents=True, exist_ok=True)
    bounds = calibration_bounds(cfg)
    tasks = [(c, s) for c in campaigns for s in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            futures = [pool.submit(run_seed, cfg, c, s, bounds) for c, s in tasks]
            texts = [f.result() for f in futures]
    else:
        texts = [run_seed(cfg, c, s, bounds) for c, s in tasks]
    for (c, s), text in zip(tasks, texts):
        p = _seed_path(out, c.label, s)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    manifest = {"command": command, "seeds": list(cfg.seeds), "threshold": cfg.threshold,
                "campaigns": [{"label": c.label, "arm": c.arm, "weights": list(c.weights)}
                              for c in campaigns],
                "calibration_bounds": bounds, "config": _jsonable(cfg.to_dict())}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return build_report(out)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


# ---------------------------------------------------------------------------
# reports (pure functions of the CSVs)
# ---------------------------------------------------------------------------

def seed_summary(cols: dict, threshold: float) -> dict:
    y = cols["y"]
    best = int(np.argmax(y))
    hit = np.flatnonzero(y > threshold)
    wall = cols["wall_ms"]
    first = int(hit[0]) if len(hit) else None
    reasons, counts = np.unique(cols["reason"].astype(str), return_counts=True)
    return {
        "n_evals": int(len(y)),
        "best_y": float(y[best]),
        "best_iteration": best,
        "best_common": float(cols["y_common"].max()),
        "evals_to_threshold": None if first is None else first + 1,
        "seconds_to_threshold": (None if first is None or np.isnan(wall[first])
                                 else float(wall[first]) / 1e3),
        "success": int(cols["success"][best]),
        "closures": int(cols["q_f"].sum()),
        "reasons": {str(r): int(c) for r, c in zip(reasons, counts)},
        "wall_s": None if np.isnan(wall[-1]) else float(wall[-1]) / 1e3,
    }


def mean_ci(Y: np.ndarray, level: float = 0.95):
    """Per-column mean and two-sided Student-t interval over rows."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[0]
    mean = Y.mean(axis=0)
    if n < 2:
        return mean, mean.copy(), mean.copy()
    half = stats.t.ppf(0.5 + level / 2, n - 1) * Y.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, mean - half, mean + half


def common_curves(histories) -> np.ndarray:
    """Best-so-far common metric, one row per seed."""
    return np.array([np.maximum.accumulate(h["y_common"]) for h in histories])


def campaign_summary(label: str, arm: str, weights, seeds, summaries, threshold) -> dict:
    best_y = [s["best_y"] for s in summaries]
    best_c = [s["best_common"] for s in summaries]
    reached = [s for s in summaries if s["evals_to_threshold"] is not None]
    secs = [s["seconds_to_threshold"] for s in reached if s["seconds_to_threshold"] is not None]
    return {
        "kind": "campaign", "label": label, "arm": arm, "weights": list(weights),
        "n_seeds": len(seeds), "threshold": threshold,
        "mean_best_y": float(np.mean(best_y)), "max_best_y": float(np.max(best_y)),
        "mean_best_common": float(np.mean(best_c)), "max_best_common": float(np.max(best_c)),
        "reached_threshold": len(reached), "failures": len(seeds) - len(reached),
        "mean_evals_to_threshold": (float(np.mean([s["evals_to_threshold"] for s in reached]))
                                    if reached else None),
        "mean_seconds_to_threshold": float(np.mean(secs)) if secs else None,
        "success_count": int(sum(s["success"] for s in summaries)),
        "wall_s": (float(sum(s["wall_s"] for s in summaries))
                   if all(s["wall_s"] is not None for s in summaries) else None),
    }


def ordering_check(means: dict, min_gap: float) -> dict:
    """Whether ``gr > ar > cp > simple`` holds among the arms present."""
    present = [a for a in ABLATION_ORDER if a in means]
    strict = all(means[a] > means[b] for a, b in zip(present, present[1:]))
    gap = means["gr"] - means["simple"] if {"gr", "simple"} <= set(means) else None
    return {"kind": "ablation", "order": present,
            "means": {a: means[a] for a in present},
            "ordering_ok": bool(strict), "gap": gap,
            "gap_ok": None if gap is None else bool(gap >= min_gap), "min_gap": min_gap,
            "scoring": SCORING_RULE}


def build_report(out) -> dict:
    """Recompute every report file under ``out`` from its CSVs and manifest."""
    out = Path(out)
    manifest = json.loads((out / "manifest.json").read_text())
    threshold = manifest["threshold"]
    seeds = manifest["seeds"]
    cfg_check = manifest["config"].get("check", {})
    lines, campaigns = [], []
    curves_dir = out / "curves"
    curves_dir.mkdir(exist_ok=True)
    for c in manifest["campaigns"]:
        hist = [read_csv(_seed_path(out, c["label"], s)) for s in seeds]
        sums = [seed_summary(h, threshold) for h in hist]
        for s, summ in zip(seeds, sums):
            lines.append({"kind": "seed", "label": c["label"], "arm": c["arm"], "seed": s, **summ})
        camp = campaign_summary(c["label"], c["arm"], c["weights"], seeds, sums, threshold)
        campaigns.append(camp)
        lines.append(camp)
        mean, lo, hi = mean_ci(common_curves(hist))
        rows = ["iteration\tmean\tci_lo\tci_hi"]
        rows += [f"{i}\t{m!r}\t{a!r}\t{b!r}" for i, (m, a, b) in
                 enumerate(zip(mean.tolist(), lo.tolist(), hi.tolist()))]
        (curves_dir / f"{c['label']}.tsv").write_text("\n".join(rows) + "\n")
    result = {"command": manifest["command"], "campaigns": campaigns}
    if manifest["command"] == "ablate":
        means = {c["arm"]: c["mean_best_common"] for c in campaigns}
        check = ordering_check(means, cfg_check.get("min_gap", 0.1))
        lines.append(check)
        result["ablation"] = check
        table = ["arm\tmean\tmax\tn_seeds"]
        table += [f"{c['arm']}\t{c['mean_best_common']:.4f}\t{c['max_best_common']:.4f}\t{c['n_seeds']}"
                  for c in campaigns]
        (out / "ablation_table.tsv").write_text("\n".join(table) + "\n")
    if manifest["command"] == "metric-sweep":
        rows = ["metric\tseed\treached\tevals_to_threshold\tseconds_to_threshold\tbest_y\tsuccess"]
        for ln in lines:
            if ln["kind"] == "seed":
                rows.append("\t".join(str(v) for v in (
                    ln["label"], ln["seed"], int(ln["evals_to_threshold"] is not None),
                    ln["evals_to_threshold"] if ln["evals_to_threshold"] is not None else "",
                    "" if ln["seconds_to_threshold"] is None else f"{ln['seconds_to_threshold']:.3f}",
                    f"{ln['best_y']:.4f}", ln["success"])))
        (out / "sweep.tsv").write_text("\n".join(rows) + "\n")
    with open(out / "report.jsonl", "w") as f:
        for ln in lines:
            f.write(json.dumps(ln, sort_keys=True) + "\n")
    result["lines"] = lines
    return result


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def run(cfg: CampaignConfig, out=None) -> dict:
    if len(cfg.arms) != 1:
        raise ConfigError(f"arms: run takes exactly one arm, got {list(cfg.arms)}")
    camp = Campaign(cfg.arms[0], cfg.arms[0], cfg.weights)
    return execute(cfg, [camp], Path(out or cfg.out), "run")


def ablate(cfg: CampaignConfig, out=None) -> dict:
    if len(cfg.arms) < 2:
        raise ConfigError("arms: the ablation needs at least two arms")
    camps = [Campaign(a, a, cfg.weights) for a in cfg.arms]
    return execute(cfg, camps, Path(out or cfg.out), "ablate")


def metric_sweep(cfg: CampaignConfig, out=None) -> dict:
    camps = [Campaign(f"w{i + 1}", cfg.sweep_arm, tuple(float(i == j) for j in range(4)))
             for i in range(4)]
    return execute(cfg, camps, Path(out or cfg.out), "metric-sweep")


def derive_weights(counts) -> MetricWeights:
    """Weights proportional to per-metric success counts."""
    c = [int(v) for v in counts]
    if len(c) != 4 or any(v < 0 for v in c):
        raise ValueError("need four non-negative success counts")
    total = sum(c)
    if total == 0:
        raise AllZero("no successful grasps; weights are undefined")
    return MetricWeights(*(v / total for v in c))


def check_result(result: dict, cfg_check: cfgmod.CheckSection) -> list:
    """Failed acceptance checks for a report (empty when all pass)."""
    failures = []
    if result["command"] == "ablate":
        a = result["ablation"]
        if not a["ordering_ok"]:
            failures.append(f"ordering {a['order']} violated: {a['means']}")
        if a["gap_ok"] is False:
            failures.append(f"gr - simple gap {a['gap']:.3f} < {a['min_gap']}")
    else:
        wanted = None
        if result["command"] == "metric-sweep":
            wanted = {f"w{i}" for i in cfg_check.sweep_metrics}
        for c in result["campaigns"]:
            if wanted is not None and c["label"] not in wanted:
                continue
            frac = c["reached_threshold"] / c["n_seeds"]
            if frac < cfg_check.min_reach:
                failures.append(f"{c['label']}: {c['reached_threshold']}/{c['n_seeds']} seeds "
                                f"reached y > {c['threshold']}")
    return failures


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _parse_seeds(text: str) -> list:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            seeds.extend(range(int(a), int(b) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def _load_config(args) -> CampaignConfig:
    cfg = cfgmod.load(args.config) if args.config else CampaignConfig()
    data = {}
    if getattr(args, "seeds", None):
        try:
            data["seeds"] = _parse_seeds(args.seeds)
        except ValueError:
            raise ConfigError(f"--seeds: cannot parse {args.seeds!r}") from None
    if getattr(args, "arm", None):
        data["arms"] = [a.strip() for a in args.arm.split(",")]
    if getattr(args, "threshold", None) is not None:
        data["threshold"] = args.threshold
    if getattr(args, "out", None):
        data["out"] = args.out
    if data:
        # re-validate the overrides with the same rules as the file
        merged = cfgmod.validate({k: v for k, v in data.items()})
        cfg = cfg.replace(**{("lam" if k == "lambda" else k): getattr(merged, k) for k in data})
    return cfg


def _print_summary(result: dict, stream) -> None:
    for c in result["campaigns"]:
        print(f"{c['label']:>8}  arm={c['arm']:<6}  mean_best_y={c['mean_best_y']:.3f}  "
              f"mean_best_common={c['mean_best_common']:.3f}  "
              f"reached>{c['threshold']}: {c['reached_threshold']}/{c['n_seeds']}  "
              f"successes={c['success_count']}", file=stream)
    if "ablation" in result:
        a = result["ablation"]
        gap = f"  (gap {a['gap']:.3f})" if a["gap"] is not None else ""
        print(f"ordering {' > '.join(a['order'])}: {'ok' if a['ordering_ok'] else 'VIOLATED'}{gap}",
              file=stream)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graspbo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def campaign_cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML campaign file")
        sp.add_argument("--seeds", help="seed list, e.g. 0-9 or 1,4,7")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--arm", help="arm or comma-separated arms, overriding the config")
        sp.add_argument("--threshold", type=float, help="outcome threshold (default 0.5)")
        sp.add_argument("--check", action="store_true", help="exit 3 when acceptance checks fail")
        return sp

    campaign_cmd("run", "one arm over all seeds")
    campaign_cmd("ablate", "all configured arms on shared seeds")
    campaign_cmd("metric-sweep", "one campaign per metric weight w_i = 1")
    sp = sub.add_parser("derive-weights", help="metric weights from success counts")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--counts", help="four comma-separated success counts")
    src.add_argument("--from", dest="from_dir", help="metric-sweep output directory")
    sp.add_argument("--out", help="write weights.json here")
    sp = sub.add_parser("report", help="rebuild reports from the CSVs in a run directory")
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--config", help="config whose check section applies to --check")
    sp.add_argument("--check", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "derive-weights":
            return _derive_weights_cmd(args)
        if args.command == "report":
            cfg = cfgmod.load(args.config) if args.config else CampaignConfig()
            result = build_report(args.out)
        else:
            cfg = _load_config(args)
            op = {"run": run, "ablate": ablate, "metric-sweep": metric_sweep}[args.command]
            result = op(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    _print_summary(result, sys.stdout)
    if args.check:
        failures = check_result(result, cfg.check)
        for f in failures:
            print(f"CHECK FAILED: {f}", file=sys.stderr)
        if failures:
            return EXIT_CHECK
    return EXIT_OK


def _derive_weights_cmd(args) -> int:
    if args.counts:
        try:
            counts = [int(v) for v in args.counts.split(",")]
        except ValueError:
            raise ConfigError(f"--counts: cannot parse {args.counts!r}") from None
    else:
        result = build_report(args.from_dir)
        by_label = {c["label"]: c["success_count"] for c in result["campaigns"]}
        if set(by_label) != {"w1", "w2", "w3", "w4"}:
            raise ConfigError(f"--from: {args.from_dir} is not a metric-sweep directory")
        counts = [by_label[f"w{i}"] for i in range(1, 5)]
    try:
        w = derive_weights(counts)
    except (AllZero, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    doc = {"counts": counts, "weights": dict(zip(METRIC_NAMES, w.as_array().tolist()))}
    print(json.dumps(doc, sort_keys=True))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "weights.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
