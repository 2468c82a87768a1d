"""Historical excitation dataset: generation, JSONL persistence, train/test split.

Each episode stores the applied feed-rate sequence and the resulting [C] and
[D] series; full reactor states are regenerable by re-simulation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import N_ACTIONS, action_feed
from .reactor import DEFAULT_INITIAL_STATE, KineticsParams, ReactorState, simulate_batch

SCHEMA_VERSION = 1


class DatasetError(Exception):
    pass


class DatasetParseError(DatasetError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class EpisodeRecord:
    controls: np.ndarray  # (n_steps,)
    c_series: np.ndarray  # (n_steps + 1,)
    d_series: np.ndarray  # (n_steps + 1,)
    seed: int

    def validate(self, n_steps: int) -> None:
        if len(self.controls) != n_steps:
            raise DatasetError(f"expected {n_steps} controls, got {len(self.controls)}")
        if len(self.c_series) != n_steps + 1 or len(self.d_series) != n_steps + 1:
            raise DatasetError("series length must be n_steps + 1")
        for arr in (self.controls, self.c_series, self.d_series):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise DatasetError("episode values must be finite and nonnegative")


@dataclass
class DatasetSplit:
    train: list[EpisodeRecord]
    test: list[EpisodeRecord]


@dataclass(frozen=True)
class ExcitationPolicy:
    """Piecewise-constant excitation: hold a uniformly drawn action level for
    a uniformly drawn number of steps."""

    seg_min: int = 1
    seg_max: int = 10

    def controls(self, rng: np.random.Generator, n_steps: int) -> np.ndarray:
        u = np.empty(n_steps)
        t = 0
        while t < n_steps:
            seg = int(rng.integers(self.seg_min, self.seg_max + 1))
            level = int(rng.integers(1, N_ACTIONS + 1))
            seg = min(seg, n_steps - t)
            u[t : t + seg] = action_feed(level)
            t += seg
        return u


def generate_dataset(
    n: int,
    params: KineticsParams,
    seed: int,
    excitation: ExcitationPolicy = ExcitationPolicy(),
    initial: ReactorState = DEFAULT_INITIAL_STATE,
) -> list[EpisodeRecord]:
    """Simulate n excitation episodes; deterministic in the master seed."""
    if n < 1:
        raise ValueError("need at least one episode")
    master = np.random.default_rng(seed)
    ep_seeds = master.integers(0, 2**63, size=n)
    n_steps = params.n_steps
    controls = np.empty((n, n_steps))
    for i, s in enumerate(ep_seeds):
        controls[i] = excitation.controls(np.random.default_rng(int(s)), n_steps)
    states, applied = simulate_batch(controls, params, initial)
    return [
        EpisodeRecord(
            controls=applied[i].copy(),
            c_series=states[i, :, 2].copy(),
            d_series=states[i, :, 3].copy(),
            seed=int(ep_seeds[i]),
        )
        for i in range(n)
    ]


def split_dataset(dataset: list[EpisodeRecord], train_n: int, seed: int) -> DatasetSplit:
    """Uniform random partition into train_n training episodes and the rest."""
    if train_n >= len(dataset):
        raise ValueError(f"train_n={train_n} must be < dataset size {len(dataset)}")
    if train_n < 0:
        raise ValueError("train_n must be >= 0")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    train_idx = set(perm[:train_n].tolist())
    train = [dataset[i] for i in sorted(train_idx)]
    test = [dataset[i] for i in range(len(dataset)) if i not in train_idx]
    return DatasetSplit(train=train, test=test)


def save_dataset(
    dataset: list[EpisodeRecord],
    path: str | Path,
    params: KineticsParams,
    seed: int,
    config_hash: str = "",
) -> None:
    meta = {
        "schema_version": SCHEMA_VERSION,
        "n": len(dataset),
        "seed": seed,
        "config_hash": config_hash,
        "params": {
            "k1": params.k1,
            "k2": params.k2,
            "b_feed": params.b_feed,
            "t_f": params.t_f,
            "dt_control": params.dt_control,
            "n_substeps": params.n_substeps,
        },
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for ep in dataset:
            rec = {
                "seed": ep.seed,
                "u": ep.controls.tolist(),
                "c": ep.c_series.tolist(),
                "d": ep.d_series.tolist(),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> tuple[list[EpisodeRecord], dict]:
    """Load a JSONL dataset; returns (episodes, metadata)."""
    episodes: list[EpisodeRecord] = []
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise DatasetParseError("empty file", 1)
        try:
            meta = json.loads(first)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"bad metadata record: {exc}", 1) from exc
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise DatasetParseError(
                f"unsupported schema_version {meta.get('schema_version')}", 1
            )
        n_steps = int(round(meta["params"]["t_f"] / meta["params"]["dt_control"]))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"bad episode record: {exc}", lineno) from exc
            try:
                ep = EpisodeRecord(
                    controls=np.array(rec["u"], dtype=float),
                    c_series=np.array(rec["c"], dtype=float),
                    d_series=np.array(rec["d"], dtype=float),
                    seed=int(rec["seed"]),
                )
                ep.validate(n_steps)
            except (KeyError, DatasetError) as exc:
                raise DatasetParseError(str(exc), lineno) from exc
            episodes.append(ep)
    if len(episodes) != meta["n"]:
        raise DatasetParseError(
            f"metadata announces {meta['n']} episodes, found {len(episodes)}",
            len(episodes) + 1,
        )
    return episodes, meta
