"""Command-line orchestration for the scheduling laboratory.

Every subcommand reads one JSON experiment config, stamps its artifacts
with a hash of that config, and writes into the output directory, so a
full experiment is a sequence of `gen`, `train`, `mdp`, `grad-est`,
`fit`, `bench`, and `report` invocations over the same config.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import tables
from .bsde import TrainConfig, load_checkpoint, save_checkpoint, train
from .diffusion import (evenly_split, minimal, random_split, static_priority,
                        weighted_split)
from .heuristics import (RegressionConfig, estimate_gradients, fit_heuristic1,
                         fit_heuristic2, fit_heuristic3, heuristic_policy,
                         group_linear_policy, load_gradient_model,
                         load_group_model, load_samples, save_gradient_model,
                         save_group_model, save_samples)
from .mdp import SECONDS, Truncation, ValueTable, bellman_sweep, mdp_policy
from .model import load_instance, save_instance
from .nn import AdamState, LrSchedule
from .policy import STATIC_RULE_KINDS, nn_policy, static_rule
from .scaling import make_test_problem, provenance, to_limit
from .sim import compare_policies, write_run_csv


class ConfigError(ValueError):
    """A config problem that should surface as a machine-readable report."""


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _load_config(path: str | None, seed: int | None, reps: int | None,
                 out: str | None) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if seed is not None:
        cfg["seed"] = seed
    if reps is not None:
        cfg["replications"] = reps
    if out is not None:
        cfg["out"] = out
    if "out" not in cfg:
        raise ConfigError("config needs an 'out' directory")
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(artifact: Path, cfg: dict, command: str, **extra) -> None:
    meta = {"config_hash": config_hash(cfg), "command": command}
    meta.update(extra)
    artifact.with_name(artifact.name + ".meta.json").write_text(
        json.dumps(meta, indent=2))


def _instances(cfg: dict):
    spec = cfg.get("instance")
    if not isinstance(spec, dict):
        raise ConfigError("config needs an 'instance' object")
    if "prelimit" in spec:
        for key in ("prelimit", "limit"):
            if key in spec and not Path(spec[key]).exists():
                raise ConfigError(f"instance file not found: {spec[key]}")
        pre = load_instance(spec["prelimit"])
        lim = load_instance(spec["limit"]) if "limit" in spec else None
        return pre, lim
    which = spec.get("which")
    if which is None:
        raise ConfigError("instance spec needs 'which' or 'prelimit'")
    kwargs = {}
    for key in ("seed", "r", "rho", "avg_agents", "interval_count"):
        if key in spec:
            kwargs[key] = spec[key]
    return make_test_problem(which, **kwargs)


def _reference(spec, num_classes: int):
    kind, args = spec[0], list(spec[1:])
    if kind == "evenly_split":
        return evenly_split(num_classes)
    if kind == "minimal":
        return minimal(num_classes)
    if kind == "random_split":
        return random_split(num_classes)
    if kind == "static_priority":
        return static_priority(num_classes, int(args[0]))
    if kind == "weighted_split":
        members, w1, w2 = args[0], args[1], args[2]
        alpha = args[3] if len(args) > 3 else 1.0
        return weighted_split(num_classes, tuple(members), w1, w2, alpha)
    raise ConfigError(f"unknown reference policy {kind!r}")


def _policy(name: str, cfg: dict, pre, lim, out: Path):
    if name in STATIC_RULE_KINDS:
        return static_rule(name, pre.classes)
    if ":" in name:
        kind, path = name.split(":", 1)
        target = Path(path) if Path(path).is_absolute() else out / path
        if kind == "mdp":
            table = ValueTable.load(target)
            return mdp_policy(table, pre, name=name)
        if kind == "nn":
            if lim is None:
                raise ConfigError("nn policy needs a limit instance")
            stack, _, _ = load_checkpoint(target)
            return nn_policy(stack, pre, lim, name=name)
        if kind in ("h1", "h2"):
            model = load_gradient_model(target)
            pol = heuristic_policy(model, pre, name=name)
            return pol
        if kind == "h3":
            model = load_group_model(target)
            return group_linear_policy(model, pre, name=name)
    raise ConfigError(f"unknown policy {name!r}")


def _guard(command):
    """Convert validation failures into machine-readable error reports."""
    import functools

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
            report = {"error": type(exc).__name__, "message": str(exc),
                      "command": command.__name__}
            click.echo(json.dumps(report), err=True)
            sys.exit(2)
    return wrapper


@click.group()
@click.option("--threads", type=int, default=None,
              help="Override the numeric thread count.")
def main(threads):
    """Scheduling laboratory for multiclass many-server queues."""
    if threads is None and "CALLSCHED_THREADS" in os.environ:
        threads = int(os.environ["CALLSCHED_THREADS"])
    if threads is not None:
        os.environ["OMP_NUM_THREADS"] = str(threads)


_config_opt = click.option("--config", "config_path", type=str, default=None)
_seed_opt = click.option("--seed", type=int, default=None)
_reps_opt = click.option("--reps", type=int, default=None)
_out_opt = click.option("--out", type=str, default=None)


@main.command()
@_config_opt
@_seed_opt
@_out_opt
@_guard
def gen(config_path, seed, out):
    """Generate instance files from the embedded test problems."""
    cfg = _load_config(config_path, seed, None, out)
    out_dir = _out_dir(cfg)
    pre, lim = _instances(cfg)
    spec = cfg["instance"]
    pre_path = out_dir / "prelimit.json"
    save_instance(pre, pre_path)
    extra = {"num_classes": pre.num_classes}
    if "which" in spec:
        extra["provenance"] = provenance(spec["which"],
                                         spec.get("seed", 0),
                                         spec.get("r", tables.BASE_SCALE_R))
    _write_meta(pre_path, cfg, "gen", **extra)
    if lim is not None:
        lim_path = out_dir / "limit.json"
        save_instance(lim, lim_path)
        _write_meta(lim_path, cfg, "gen", **extra)
    click.echo(json.dumps({"written": str(pre_path),
                           "num_classes": pre.num_classes}))


def _train_settings(cfg: dict) -> dict:
    which = cfg.get("instance", {}).get("which")
    settings = dict(tables.TRAIN_PRESETS.get(which, {}))
    settings.update(cfg.get("train", {}))
    required = ("iterations", "lr_schedule", "reference_policy")
    missing = [k for k in required if k not in settings]
    if missing:
        raise ConfigError(f"train settings missing {missing}")
    return settings


@main.command("train")
@_config_opt
@_seed_opt
@_out_opt
@click.option("--resume", "resume_dir", type=str, default=None)
def train_cmd(config_path, seed, out, resume_dir):
    return _train_impl(config_path, seed, out, resume_dir)


@_guard
def _train_impl(config_path, seed, out, resume_dir):
    cfg = _load_config(config_path, seed, None, out)
    out_dir = _out_dir(cfg)
    settings = _train_settings(cfg)
    spec = dict(cfg["instance"])
    if "interval_count" in settings:
        spec["interval_count"] = settings["interval_count"]
    _, lim = _instances({**cfg, "instance": spec})
    if lim is None:
        raise ConfigError("training needs a limit instance")
    K = lim.num_classes
    tconf = TrainConfig(
        iterations=int(settings["iterations"]),
        schedule=LrSchedule(tuple(tuple(p)
                                  for p in settings["lr_schedule"])),
        reference=_reference(settings["reference_policy"], K),
        batch_size=int(settings.get("batch_size", 256)),
        kappa=float(settings.get("kappa", 1.0)),
        penalty_weight=float(settings.get("penalty_weight", 0.0)),
        seed=int(cfg.get("seed", 0)),
        hidden=tuple(settings.get("hidden", (100, 100, 100, 100))))
    stack = adam = None
    if resume_dir is not None:
        stack, adam, _ = load_checkpoint(resume_dir)
    if adam is None:
        adam = AdamState(schedule=tconf.schedule)
    stack, history = train(lim, tconf, stack=stack, adam=adam,
                           checkpoint_dir=out_dir,
                           checkpoint_every=int(settings.get(
                               "checkpoint_every", 0)))
    last = history.train_loss[-1] if history.train_loss else None
    save_checkpoint(out_dir, stack, adam, tconf, lim, last)
    hist_path = out_dir / "history.csv"
    with open(hist_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "train_loss", "decay"])
        for it, loss, decay in zip(history.iterations, history.train_loss,
                                   history.decay):
            writer.writerow([it, repr(loss), repr(decay)])
    _write_meta(hist_path, cfg, "train", iterations=stack.iteration)
    _write_meta(out_dir / "manifest.json", cfg, "train")
    click.echo(json.dumps({"iterations": stack.iteration,
                           "final_loss": last}))


@main.command("mdp")
@_config_opt
@_seed_opt
@_out_opt
@_guard
def mdp_cmd(config_path, seed, out):
    """Solve the lattice dynamic program and store the value table."""
    cfg = _load_config(config_path, seed, None, out)
    out_dir = _out_dir(cfg)
    pre, _ = _instances(cfg)
    settings = cfg.get("mdp", {})
    which = cfg.get("instance", {}).get("which")
    bounds = settings.get("truncation",
                          tables.MDP_TRUNCATION.get(which))
    if bounds is None:
        raise ConfigError("mdp settings need a truncation")
    dt = float(settings.get("dt_seconds", 0.1)) * SECONDS
    save_every = float(settings.get("save_every_seconds", 60.0)) * SECONDS
    table = bellman_sweep(pre, Truncation(tuple(int(b) for b in bounds)),
                          dt, save_every=save_every,
                          seed=int(cfg.get("seed", 0)))
    path = out_dir / "mdp_table"
    table.save(path)
    _write_meta(path.with_suffix(".npz"), cfg, "mdp",
                monotone_violations=table.monotone_violations)
    click.echo(json.dumps({"written": str(path),
                           "monotone_violations":
                               table.monotone_violations}))


@main.command("grad-est")
@_config_opt
@_seed_opt
@_out_opt
@_guard
def grad_est(config_path, seed, out):
    """Estimate value gradients by paired simulation along sample paths."""
    cfg = _load_config(config_path, seed, None, out)
    out_dir = _out_dir(cfg)
    pre, _ = _instances(cfg)
    settings = cfg.get("gradients", {})
    base = static_rule(settings.get("base_policy", "cmu_over_theta"),
                       pre.classes)
    samples = estimate_gradients(
        pre, base,
        num_paths=int(settings.get("paths", 200)),
        replications=int(settings.get("replications", 50)),
        interval_count=int(settings.get("intervals", 204)),
        seed=int(cfg.get("seed", 0)),
        decision_freq=settings.get("decision_freq_hours"))
    path = out_dir / "gradients.csv"
    save_samples(path, samples)
    _write_meta(path, cfg, "grad-est", samples=len(samples))
    click.echo(json.dumps({"written": str(path), "samples": len(samples)}))


@main.command("fit")
@_config_opt
@_seed_opt
@_out_opt
@_guard
def fit(config_path, seed, out):
    """Fit one of the dynamic index heuristics from stored gradients."""
    cfg = _load_config(config_path, seed, None, out)
    out_dir = _out_dir(cfg)
    settings = cfg.get("fit", {})
    which = settings.get("heuristic")
    if which not in (1, 2, 3):
        raise ConfigError("fit settings need 'heuristic' in {1, 2, 3}")
    samples_path = Path(settings.get("samples", out_dir / "gradients.csv"))
    if not samples_path.exists():
        raise ConfigError(f"gradient samples not found: {samples_path}")
    samples = load_samples(samples_path)
    pre, _ = _instances(cfg)
    grads = cfg.get("gradients", {})
    interval_count = int(grads.get("intervals", 204))
    horizon = pre.grid.horizon
    if which == 3:
        groups = settings.get("groups")
        if groups is None:
            raise ConfigError("heuristic 3 needs an explicit grouping")
        model, _, trace = fit_heuristic3(
            samples, [tuple(g) for g in groups], pre,
            replications=int(cfg.get("replications", 100)),
            seed=int(cfg.get("seed", 0)),
            decision_freq=settings.get("decision_freq_hours"),
            points=int(settings.get("points", 5)))
        path = out_dir / "h3_model.json"
        save_group_model(path, model)
        _write_meta(path, cfg, "fit", campaigns=len(trace))
        click.echo(json.dumps({"written": str(path),
                               "coefficients": list(model.coefficients)}))
        return
    preset = dict(tables.HEUR_FIT_PRESETS[
        "per_step" if which == 1 else "pooled"])
    preset.update(settings.get("regression", {}))
    rconf = RegressionConfig(
        iterations=int(preset["iterations"]),
        schedule=LrSchedule(tuple(tuple(p)
                                  for p in preset["lr_schedule"])),
        penalty_weight=float(preset.get("penalty_weight", 0.5)),
        hidden=tuple([int(preset.get("hidden_width", 100))]
                     * int(preset.get("hidden_layers", 2))),
        seed=int(cfg.get("seed", 0)))
    if which == 1:
        model, _ = fit_heuristic1(samples, interval_count, horizon, rconf)
        path = out_dir / "h1_model"
    else:
        model, _ = fit_heuristic2(samples, interval_count, horizon, rconf)
        path = out_dir / "h2_model"
    save_gradient_model(path, model)
    _write_meta(path.with_suffix(".npz"), cfg, "fit")
    click.echo(json.dumps({"written": str(path)}))


@main.command()
@_config_opt
@_seed_opt
@_reps_opt
@_out_opt
@_guard
def bench(config_path, seed, reps, out):
    """Run the policy roster under common random numbers."""
    cfg = _load_config(config_path, seed, reps, out)
    out_dir = _out_dir(cfg)
    roster = cfg.get("policies")
    if not roster:
        raise ConfigError("config needs a nonempty 'policies' roster")
    pre, lim = _instances(cfg)
    policies = [_policy(name, cfg, pre, lim, out_dir) for name in roster]
    replications = int(cfg.get("replications", 100))
    stats, gaps = compare_policies(
        pre, policies, replications, int(cfg.get("seed", 0)),
        decision_freq=cfg.get("decision_freq_hours"))
    summary = out_dir / "bench_summary.csv"
    with open(summary, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "mean_cost", "half_width",
                         "gap_pct", "gap_half_width_pct"])
        for name, st, gap in zip(roster, stats, gaps):
            writer.writerow([name, repr(float(st.mean_cost)),
                             repr(float(st.half_width)),
                             repr(float(gap.relative_gap_pct)),
                             repr(float(gap.relative_half_width_pct))])
    _write_meta(summary, cfg, "bench", replications=replications)
    for name, st in zip(roster, stats):
        safe = name.replace(":", "_").replace("/", "_")
        run_path = out_dir / f"bench_runs_{safe}.csv"
        write_run_csv(run_path, st)
        _write_meta(run_path, cfg, "bench")
    click.echo(json.dumps({"written": str(summary),
                           "policies": list(roster)}))


@main.command()
@_config_opt
@_out_opt
@click.option("--force", is_flag=True, default=False,
              help="Mix artifacts from different config hashes.")
@_guard
def report(config_path, out, force):
    """Render the benchmark summary as aligned plain text plus CSV."""
    cfg = _load_config(config_path, None, None, out)
    out_dir = _out_dir(cfg)
    summary = out_dir / "bench_summary.csv"
    if not summary.exists():
        raise ConfigError(f"no benchmark summary in {out_dir}")
    hashes = set()
    for meta_path in out_dir.glob("*.meta.json"):
        meta = json.loads(meta_path.read_text())
        hashes.add(meta.get("config_hash"))
    if len(hashes) > 1 and not force:
        raise ConfigError(
            f"artifacts carry mixed config hashes {sorted(hashes)}; "
            "rerun or pass --force")
    with open(summary, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    report_csv = out_dir / "report.csv"
    with open(report_csv, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    lines = [f"{'policy':<28} {'cost':>22} {'gap':>20}"]
    for name, mean, hw, gap, gap_hw in body:
        cost = f"{float(mean):.2f} ± {float(hw):.2f}"
        gap_s = f"{float(gap):.2f}% ± {float(gap_hw):.2f}%"
        lines.append(f"{name:<28} {cost:>22} {gap_s:>20}")
    text = "\n".join(lines) + "\n"
    (out_dir / "report.txt").write_text(text)
    _write_meta(report_csv, cfg, "report")
    click.echo(text)


if __name__ == "__main__":
    main()
