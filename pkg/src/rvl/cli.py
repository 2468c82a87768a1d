"""Experiment driver: gen-data -> train-surrogate -> train -> combine ->
evaluate -> report, with all tables and figure data emitted as CSV/JSON.

Every artifact embeds the config hash and master seed; commands refuse to mix
artifacts produced under different hashes.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import agents, dataset as ds, surrogate as sg
from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    load_config,
)
from .mdp import RewardTable
from .reactor import ReactorError, trajectory_to_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# Published control results for methods not implemented here; carried along in
# reports for side-by-side comparison only.
REFERENCE_RESULTS = {
    "recurrent-neuro-fuzzy": {"C": 0.0559, "D": 0.0304, "V": 0.9900},
    "nominal-control": {"C": 0.0615, "D": 0.0345, "V": 0.9918},
    "minimal-risk": {"C": 0.0612, "D": 0.0236, "V": 1.000},
}

def pure_variants(cfg: ExperimentConfig) -> list[str]:
    return ["rvl-short"] + [f"rvl-{n}" for n in cfg.sights.immediates] + ["rvl-long"]


class ArtifactError(Exception):
    pass


def worker_count() -> int:
    raw = os.environ.get("RVL_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n) if n else max(1, os.cpu_count() or 1)


# --------------------------------------------------------------------------
# Run-directory bookkeeping


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "master_seed": cfg.master_seed}


def write_lock(out: Path, cfg: ExperimentConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lock = out / "config.lock.json"
    doc = {**_provenance(cfg), "config": cfg.to_dict()}
    if lock.exists():
        existing = json.loads(lock.read_text())
        if existing.get("config_hash") != doc["config_hash"]:
            raise ArtifactError(
                f"run directory {out} was produced under config hash "
                f"{existing.get('config_hash')}, current config hashes to "
                f"{doc['config_hash']}; refusing to mix artifacts"
            )
        return
    lock.write_text(json.dumps(doc, sort_keys=True))


def check_provenance(doc: dict, cfg: ExperimentConfig, what: str) -> None:
    if doc.get("config_hash") != cfg.config_hash():
        raise ArtifactError(
            f"{what} carries config hash {doc.get('config_hash')}, expected "
            f"{cfg.config_hash()}; refusing to mix artifacts"
        )


def _csv_header(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.config_hash()} master_seed={cfg.master_seed}"


def _write_csv(path: Path, cfg: ExperimentConfig, header: str,
               rows: list[list]) -> None:
    lines = [_csv_header(cfg), header]
    for row in rows:
        lines.append(",".join(
            f"{x:.10g}" if isinstance(x, float) else str(x) for x in row
        ))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Pipeline stages (also the programmatic API used by `smoke`)


def cmd_gen_data(cfg: ExperimentConfig, out: Path) -> Path:
    write_lock(out, cfg)
    params = cfg.reactor.to_params()
    excitation = ds.ExcitationPolicy(cfg.dataset.seg_min, cfg.dataset.seg_max)
    episodes = ds.generate_dataset(
        cfg.dataset.n_episodes, params, cfg.seed_for("dataset"),
        excitation=excitation, initial=cfg.reactor.initial.to_state(),
    )
    path = out / "dataset.jsonl"
    ds.save_dataset(episodes, path, params, cfg.seed_for("dataset"),
                    config_hash=cfg.config_hash())
    print(f"wrote {len(episodes)} episodes to {path}")
    return path


def _load_split(cfg: ExperimentConfig, out: Path) -> ds.DatasetSplit:
    path = out / "dataset.jsonl"
    if not path.exists():
        raise ArtifactError(f"missing dataset file {path}; run gen-data first")
    episodes, meta = ds.load_dataset(path)
    check_provenance(meta, cfg, str(path))
    return ds.split_dataset(episodes, cfg.dataset.train_n, cfg.seed_for("split"))


def cmd_train_surrogate(cfg: ExperimentConfig, out: Path,
                        epochs: int | None = None) -> Path:
    write_lock(out, cfg)
    split = _load_split(cfg, out)
    norm = sg.Normalization()
    models = {}
    for channel, section in (("c", cfg.surrogate_c), ("d", cfg.surrogate_d)):
        tc = section.to_training_config(cfg.seed_for(f"surrogate:{channel}"), epochs)
        inputs, targets = sg.training_arrays(split.train, channel, norm)
        model = sg.init_model(tc.hidden_size, np.random.default_rng(tc.seed))
        ckpt = out / "surrogate.json"
        # resume from an existing checkpoint so repeated runs extend training
        if ckpt.exists():
            prev_doc = json.loads(ckpt.read_text())
            check_provenance(prev_doc, cfg, str(ckpt))
            prev = sg.load_checkpoint(ckpt)
            prev_model = prev.model_c if channel == "c" else prev.model_d
            if prev_model.hidden_size == tc.hidden_size:
                model = prev_model
        model, losses = sg.train(model, inputs, targets, tc)
        models[channel] = model
        loss_path = out / f"loss_{channel}.csv"
        prev_rows = []
        if loss_path.exists():
            prev_rows = [
                line for line in loss_path.read_text().splitlines()
                if line and not line.startswith("#") and not line.startswith("epoch")
            ]
        start = len(prev_rows)
        rows = [r.split(",") for r in prev_rows]
        rows += [[start + i + 1, float(l)] for i, l in enumerate(losses)]
        _write_csv(loss_path, cfg, "epoch,loss",
                   [[int(r[0]), float(r[1])] for r in rows])
        print(f"trained {channel}-model: final loss {losses[-1]:.3e}")
    space = sg.VirtualSpace(model_c=models["c"], model_d=models["d"], norm=norm)
    path = out / "surrogate.json"
    sg.save_checkpoint(space, path, extra=_provenance(cfg))
    print(f"wrote surrogate checkpoint to {path}")
    return path


def _load_surrogate(cfg: ExperimentConfig, out: Path) -> sg.VirtualSpace:
    path = out / "surrogate.json"
    if not path.exists():
        raise ArtifactError(f"missing surrogate checkpoint {path}; run train-surrogate first")
    doc = json.loads(path.read_text())
    check_provenance(doc, cfg, str(path))
    return sg.load_checkpoint(path)


def sight_variants(cfg: ExperimentConfig) -> list[tuple[str, int]]:
    """(variant name, lookahead depth) pairs, duplicates dropped."""
    pairs = [("rvl-short", cfg.sights.short)]
    pairs += [(f"rvl-{n}", n) for n in cfg.sights.immediates]
    pairs.append(("rvl-long", cfg.sights.long))
    seen: dict[int, str] = {}
    out = []
    for name, n in pairs:
        if n not in seen:
            seen[n] = name
            out.append((name, n))
    return out


def all_variants(cfg: ExperimentConfig) -> list[str]:
    return ["rvl", "qlearning", "smsa"]


def cmd_train(cfg: ExperimentConfig, out: Path, variant: str) -> list[Path]:
    write_lock(out, cfg)
    rewards = cfg.reward_table()
    params = cfg.reactor.to_params()
    initial = cfg.reactor.initial.to_state()
    seed = cfg.seed_for(f"agent:{variant}")
    pol_dir = out / "policies"
    pol_dir.mkdir(parents=True, exist_ok=True)
    if variant in ("qlearning", "smsa"):
        trainer = (agents.train_q_learning if variant == "qlearning"
                   else agents.train_smsa)
        policy, log = trainer(params, cfg.baseline.to_baseline_config(seed),
                              rewards, initial)
        named = [(variant, policy)]
    elif variant == "rvl":
        # one run trains every sight: the virtual table is shared, each sight
        # keeps its own real table
        space = _load_surrogate(cfg, out)
        pairs = sight_variants(cfg)
        policies, log = agents.train_sights(
            params, space, cfg.agent.to_rvl_config(cfg.sights.short, seed),
            [n for _, n in pairs], rewards, initial)
        named = [(name, policies[n]) for name, n in pairs]
    else:
        raise ConfigError(f"unknown variant: {variant}")
    paths = []
    for name, policy in named:
        path = pol_dir / f"{name}.json"
        agents.save_policy(policy, path,
                           meta={**_provenance(cfg), "variant": name, "seed": seed})
        paths.append(path)
    _write_csv(out / "logs" / f"{variant}.csv", cfg, "iteration,kind,return",
               [[r.iteration, r.kind, r.episode_return] for r in log])
    print(f"trained {variant}: " + ", ".join(str(p) for p in paths))
    return paths


def cmd_train_all(cfg: ExperimentConfig, out: Path) -> list[Path]:
    variants = all_variants(cfg)
    workers = min(worker_count(), len(variants))
    if workers == 1:
        return [p for v in variants for p in cmd_train(cfg, out, v)]
    write_lock(out, cfg)
    cfg_dict = cfg.to_dict()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_train_worker, cfg_dict, str(out), v)
                   for v in variants]
        return [Path(p) for f in futures for p in f.result()]


def _train_worker(cfg_dict: dict, out: str, variant: str) -> list[str]:
    paths = cmd_train(config_from_dict(cfg_dict), Path(out), variant)
    return [str(p) for p in paths]


def cmd_combine(cfg: ExperimentConfig, short_path: Path, long_path: Path,
                output: Path | None = None) -> Path:
    short, short_doc = agents.load_policy(short_path)
    long_, long_doc = agents.load_policy(long_path)
    check_provenance(short_doc, cfg, str(short_path))
    check_provenance(long_doc, cfg, str(long_path))
    for pol, path in ((short, short_path), (long_, long_path)):
        if not isinstance(pol, agents.SightPolicy):
            raise ArtifactError(f"{path} is not a sight-policy checkpoint")
    combined = agents.combine_policies(short, long_)
    if output is None:
        name = f"combined-{short_path.stem}-{long_path.stem}.json"
        output = short_path.parent / name
    agents.save_policy(
        combined, output,
        meta={**_provenance(cfg),
              "sources": [short_path.stem, long_path.stem]})
    print(f"wrote combined policy to {output}")
    return output


def cmd_evaluate(cfg: ExperimentConfig, out: Path, policy_path: Path) -> Path:
    write_lock(out, cfg)
    policy, doc = agents.load_policy(policy_path)
    check_provenance(doc, cfg, str(policy_path))
    metrics = agents.evaluate_policy(
        policy, cfg.reactor.to_params(), cfg.reward_table(),
        cfg.reactor.initial.to_state())
    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    name = policy_path.stem
    mpath = eval_dir / f"{name}.metrics.json"
    mdoc = {**_provenance(cfg), "policy": name, **metrics.to_dict(),
            "step_rewards": metrics.step_rewards}
    mpath.write_text(json.dumps(mdoc, sort_keys=True))
    tpath = eval_dir / f"{name}.trajectory.csv"
    tpath.write_text(trajectory_to_csv(
        metrics.trajectory, header_comment=_csv_header(cfg)[2:]))
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return mpath


def _read_metrics(out: Path, name: str, cfg: ExperimentConfig) -> dict | None:
    path = out / "eval" / f"{name}.metrics.json"
    if not path.exists():
        return None
    doc = json.loads(path.read_text())
    check_provenance(doc, cfg, str(path))
    return doc


def cmd_report(cfg: ExperimentConfig, out: Path) -> Path:
    write_lock(out, cfg)
    report = out / "report"
    missing: list[str] = []

    def metrics_row(name: str, label: str | None = None) -> list | None:
        doc = _read_metrics(out, name, cfg)
        if doc is None:
            missing.append(f"eval/{name}.metrics.json")
            return None
        return [label or name, doc["final_c"], doc["final_d"], doc["final_v"],
                doc["c_minus_d"], doc["objective"]]

    header = "algorithm,C,D,V,C_minus_D,objective"

    # Table of cross-algorithm control results, reference rows included.
    rows3 = []
    for name, ref in REFERENCE_RESULTS.items():
        cmd = ref["C"] - ref["D"]
        rows3.append([name + " (reference)", ref["C"], ref["D"], ref["V"],
                      cmd, cmd * ref["V"]])
    for name in ("qlearning", "smsa", "combined-rvl-short-rvl-long"):
        row = metrics_row(name)
        if row:
            rows3.append(row)

    rows4 = [r for r in (metrics_row(v) for v in pure_variants(cfg)) if r]
    combo_names = sorted(
        p.stem.removesuffix(".metrics")
        for p in (out / "eval").glob("combined-*.metrics.json")
    ) if (out / "eval").exists() else []
    rows5 = [r for r in (metrics_row(n) for n in combo_names) if r]

    rows6 = []
    reward_series: dict[str, list[float]] = {}
    for name in pure_variants(cfg) + combo_names + ["qlearning", "smsa"]:
        doc = _read_metrics(out, name, cfg)
        if doc is not None:
            rows6.append([name, doc["total_benefits"]])
            reward_series[name] = doc["step_rewards"]

    if not rows6:
        raise ArtifactError(
            "nothing to report; missing artifacts: " + ", ".join(
                missing or [f"{out}/eval/*.metrics.json"]))

    report.mkdir(parents=True, exist_ok=True)
    _write_csv(report / "table3.csv", cfg, header, rows3)
    _write_csv(report / "table4.csv", cfg, header, rows4)
    _write_csv(report / "table5.csv", cfg, header, rows5)
    _write_csv(report / "table6.csv", cfg, "algorithm,total_expected_benefits", rows6)

    names = sorted(reward_series)
    n_steps = cfg.reactor.to_params().n_steps
    _write_csv(
        report / "reward_vs_time.csv", cfg, "t," + ",".join(names),
        [[t + 1] + [reward_series[n][t] for n in names] for t in range(n_steps)],
    )

    # Per-step prediction RMSE over the held-out split, when the surrogate
    # and dataset are both present.
    if (out / "surrogate.json").exists() and (out / "dataset.jsonl").exists():
        space = _load_surrogate(cfg, out)
        split = _load_split(cfg, out)
        controls = np.stack([ep.controls for ep in split.test])
        pred_c, pred_d = sg.rollout_predict_batch(
            space, controls, cfg.reactor.initial.c, cfg.reactor.initial.d)
        true_c = np.stack([ep.c_series for ep in split.test])
        true_d = np.stack([ep.d_series for ep in split.test])
        for channel, pred, true in (("c", pred_c, true_c), ("d", pred_d, true_d)):
            per_step, mean = sg.rmse(pred, true)
            _write_csv(report / f"rmse_{channel}.csv", cfg, "t,rmse",
                       [[t, float(v)] for t, v in enumerate(per_step)])
            print(f"{channel}-model mean per-step RMSE: {mean:.3e}")
    else:
        missing.extend(n for n in ("surrogate.json", "dataset.jsonl")
                       if not (out / n).exists())

    if missing:
        print("report incomplete; missing: " + ", ".join(missing))
    print(f"report written to {report}")
    return report


def smoke_config(cfg: ExperimentConfig, n: int | None = None,
                 epochs: int | None = None) -> ExperimentConfig:
    """Tiny end-to-end variant of a config: every pipeline stage runs, minutes
    not hours."""
    data = cfg.to_dict()
    data["dataset"].update({"n_episodes": n or 50, "train_n": (n or 50) * 4 // 5})
    for key in ("surrogate_c", "surrogate_d"):
        data[key].update({"hidden_size": 8, "epochs": epochs or 5, "mini_batch": 10})
    data["agent"].update({"episodes": 50})
    data["baseline"].update({"episodes": 50})
    data["sights"].update({"immediates": []})
    return config_from_dict(data)


def cmd_smoke(cfg: ExperimentConfig, out: Path) -> None:
    scfg = smoke_config(cfg)
    cmd_gen_data(scfg, out)
    cmd_train_surrogate(scfg, out)
    for variant in all_variants(scfg):
        cmd_train(scfg, out, variant)
    cmd_combine(
        scfg, out / "policies" / "rvl-short.json", out / "policies" / "rvl-long.json")
    for path in sorted((out / "policies").glob("*.json")):
        cmd_evaluate(scfg, out, path)
    cmd_report(scfg, out)


# --------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rvl",
        description="Fed-batch process control via virtual-space reinforcement learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None,
                       help="YAML experiment config (defaults apply if omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--out", type=Path, default=Path("run"),
                       help="run directory for artifacts")

    p = sub.add_parser("gen-data", help="generate the excitation dataset")
    common(p)
    p.add_argument("--n", type=int, default=None, help="episode count override")

    p = sub.add_parser("train-surrogate", help="train the virtual-space models")
    common(p)
    p.add_argument("--epochs", type=int, default=None, help="epoch override for both models")

    p = sub.add_parser("train", help="train a policy variant")
    common(p)
    p.add_argument("--variant", required=True,
                   help="rvl (all sights in one run) | qlearning | smsa | all")

    p = sub.add_parser("combine", help="elementwise-max combination of two sight policies")
    common(p)
    p.add_argument("short", type=Path, help="short-sight policy checkpoint")
    p.add_argument("long", type=Path, help="long-sight policy checkpoint")
    p.add_argument("--output", type=Path, default=None)

    p = sub.add_parser("evaluate", help="greedy-episode metrics for a policy checkpoint")
    common(p)
    p.add_argument("policy", type=Path)

    p = sub.add_parser("report", help="emit all result tables and figure data")
    common(p)

    p = sub.add_parser("smoke", help="tiny end-to-end pipeline run")
    common(p)
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "n", None) is not None:
        overrides["n_episodes"] = args.n
    return apply_overrides(cfg, **overrides) if overrides else cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        out = args.out
        if args.command == "gen-data":
            cmd_gen_data(cfg, out)
        elif args.command == "train-surrogate":
            cmd_train_surrogate(cfg, out, epochs=args.epochs)
        elif args.command == "train":
            if args.variant == "all":
                cmd_train_all(cfg, out)
            else:
                cmd_train(cfg, out, args.variant)
        elif args.command == "combine":
            cmd_combine(cfg, args.short, args.long, args.output)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out, args.policy)
        elif args.command == "report":
            cmd_report(cfg, out)
        elif args.command == "smoke":
            cmd_smoke(cfg, out)
    except (ConfigError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReactorError, sg.SurrogateError, ds.DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
