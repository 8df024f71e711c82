"""Artifact persistence with an embedded hash chain.

Grids and value tables are saved as npz files with a JSON header; every
artifact records the hashes of its inputs (tank dynamics -> grids -> value
table) and loaders verify the chain, so stale or mismatched files are refused
instead of silently producing garbage.  Grid files contain no reward data:
they stay valid when only the reward changes.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatchError
from .quantizer import ChainQuantizer, QuantizationGrid, _mode_slices, grids_digest
from .tank import TankParams
from .value import ValueTable

GRIDS_FORMAT = "tankopt-grids-v1"
VALUE_FORMAT = "tankopt-value-v1"


def save_grids(path, quantizer: ChainQuantizer, seed: int):
    meta = {
        "format": GRIDS_FORMAT,
        "dynamics_hash": quantizer.dynamics_hash_,
        "digest": quantizer.digest_,
        "n_points": quantizer.n_points,
        "calib_sims": quantizer.calib_sims,
        "train_sims": quantizer.train_sims,
        "freeze_sims": quantizer.freeze_sims,
        "gamma0": quantizer.gamma0,
        "decay": quantizer.decay,
        "seed": seed,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "n_grids": quantizer.n_grids_,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
              "distortion": quantizer.distortion_}
    for g in quantizer.grids_:
        arrays[f"modes_{g.index}"] = g.modes
        arrays[f"coords_{g.index}"] = g.coords
        arrays[f"weights_{g.index}"] = g.weights
        if g.transition is not None:
            arrays[f"trans_{g.index}"] = g.transition
    np.savez_compressed(path, **arrays)


def load_grids(path, params: TankParams | None = None) -> ChainQuantizer:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != GRIDS_FORMAT:
            raise ArtifactMismatchError(f"{path} is not a grids file")
        if params is not None and meta["dynamics_hash"] != params.dynamics_hash():
            raise ArtifactMismatchError(
                "grids were built for different tank dynamics "
                f"({meta['dynamics_hash']} != {params.dynamics_hash()})")
        grids = []
        for n in range(meta["n_grids"]):
            modes = data[f"modes_{n}"]
            lo, hi = _mode_slices(modes)
            grids.append(QuantizationGrid(
                n, modes, data[f"coords_{n}"], data[f"weights_{n}"], lo, hi,
                data[f"trans_{n}"] if f"trans_{n}" in data else None))
        q = ChainQuantizer(n_points=meta["n_points"],
                           calib_sims=meta["calib_sims"],
                           train_sims=meta["train_sims"],
                           freeze_sims=meta["freeze_sims"],
                           gamma0=meta["gamma0"], decay=meta["decay"],
                           random_state=meta["seed"])
        q.grids_ = grids
        q.n_grids_ = meta["n_grids"]
        q.distortion_ = data["distortion"]
        q.dynamics_hash_ = meta["dynamics_hash"]
        q.digest_ = grids_digest(grids)
        if params is not None:
            q.model_params_ = params
        if q.digest_ != meta["digest"]:
            raise ArtifactMismatchError(f"{path} is corrupt (digest mismatch)")
        return q


def grids_meta(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["meta"]).decode())


def save_value_table(path, table: ValueTable, extra: dict | None = None):
    meta = {
        "format": VALUE_FORMAT,
        "grids_digest": table.grids_digest,
        "reward_hash": table.reward_hash,
        "n_nodes": table.n_nodes,
        "n_grids": table.n_grids,
        "v0": table.v0,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        **(extra or {}),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for n in range(table.n_grids):
        arrays[f"values_{n}"] = table.values[n]
        arrays[f"ustar_{n}"] = table.u_star[n]
        arrays[f"branch_{n}"] = table.branch[n]
        arrays[f"tstar_{n}"] = table.t_star[n]
    np.savez_compressed(path, **arrays)


def load_value_table(path, quantizer: ChainQuantizer | None = None,
                     params: TankParams | None = None) -> ValueTable:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != VALUE_FORMAT:
            raise ArtifactMismatchError(f"{path} is not a value-table file")
        if quantizer is not None and meta["grids_digest"] != quantizer.digest_:
            raise ArtifactMismatchError(
                "value table was solved on different grids")
        if params is not None and meta["reward_hash"] != params.reward_hash():
            raise ArtifactMismatchError(
                "value table was solved for a different reward")
        n = meta["n_grids"]
        return ValueTable(
            values=[data[f"values_{i}"] for i in range(n)],
            u_star=[data[f"ustar_{i}"] for i in range(n)],
            branch=[data[f"branch_{i}"] for i in range(n)],
            t_star=[data[f"tstar_{i}"] for i in range(n)],
            n_nodes=meta["n_nodes"],
            grids_digest=meta["grids_digest"],
            reward_hash=meta["reward_hash"])


def value_meta(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["meta"]).decode())


def export_grids_csv(path, quantizer: ChainQuantizer, params: TankParams):
    """One row per grid point: n, mode, h, theta, t, s, weight."""
    from .quantizer import denormalize_coords
    P = params.as_array()
    with open(path, "w") as fh:
        fh.write("jump_index,mode,h,theta,t,s,weight\n")
        for g in quantizer.grids_:
            raw = denormalize_coords(g.coords, P)
            for j in range(g.n_points):
                fh.write(f"{g.index},{int(g.modes[j])},"
                         f"{raw[j, 0]:.9g},{raw[j, 1]:.9g},{raw[j, 2]:.9g},"
                         f"{raw[j, 3]:.9g},{g.weights[j]:.9g}\n")


def export_value_csv(path, table: ValueTable):
    """One row per grid point: n, point id, value, u*, branch."""
    with open(path, "w") as fh:
        fh.write("jump_index,point,value,u_star,branch\n")
        for n in range(table.n_grids):
            for j in range(len(table.values[n])):
                fh.write(f"{n},{j},{table.values[n][j]:.9g},"
                         f"{table.u_star[n][j]:.9g},{int(table.branch[n][j])}\n")


@dataclass
class RunManifest:
    """Provenance of one pipeline run: seeds, hashes, stage status."""

    seed: int
    config_path: str | None
    command: str
    dynamics_hash: str
    reward_hash: str
    stages: dict = field(default_factory=dict)
    created: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S"))

    def record(self, stage: str, status: str, **info):
        self.stages[stage] = {"status": status, **info}

    def save(self, path):
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2))

    @classmethod
    def load(cls, path):
        data = json.loads(Path(path).read_text())
        return cls(**data)
