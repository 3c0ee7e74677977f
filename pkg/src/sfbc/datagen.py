"""Mixed expert/failure demonstration dataset.

Each trajectory is two back-to-back 300-step demonstrations, one from the
expert controller and one from the failure controller, in a per-trajectory
random order, with the second segment continuing from the first segment's
terminal state. Ground-truth segment ordering is written only to a sidecar
file so the training data carries no labels.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pendulum import State, rollout, wrap_angle, wrap_angles
from .policies import EXPERT_POLICY_ID, FAILURE_POLICY_ID, expert_policy, failure_policy

DATA_FILE = "trajectories.jsonl"
LABELS_FILE = "labels.jsonl"
MANIFEST_FILE = "manifest.json"
MANIFEST_VERSION = 1

DEFAULT_N_TRAJ = 500
DEFAULT_HORIZON = 600

EXPERT_FIRST = "expert-first"
FAILURE_FIRST = "failure-first"

# Build gates over the generated data, checked on the final 50 steps of each
# policy segment.
EXPERT_GATE_ANGLE = 0.3
FAILURE_GATE_ANGLE = 0.5
GATE_WINDOW = 50
GATE_MIN_FRACTION = 0.9


class DatasetGateError(RuntimeError):
    """Generated data failed a quality gate; controllers need retuning."""


@dataclass
class Trajectory:
    traj_id: int
    thetas: np.ndarray
    omegas: np.ndarray
    torques: np.ndarray
    rewards: np.ndarray
    segment_order: str | None = None

    def __len__(self) -> int:
        return len(self.thetas)


@dataclass
class DatasetManifest:
    version: int
    trajectory_count: int
    horizon: int
    seed: int
    policies: dict[str, str]
    files: dict[str, str]
    gates: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        version = raw.get("version")
        if version != MANIFEST_VERSION:
            raise ValueError(f"manifest schema version {version!r} is not supported")
        return cls(**raw)


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    horizon: int
    checksum: str

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def record_count(self) -> int:
        return sum(len(t) for t in self.trajectories)


def sample_initial_state(rng: np.random.Generator) -> State:
    # Full-circle start angles so failure-first trajectories are nontrivial.
    theta = wrap_angle(rng.uniform(-math.pi, math.pi))
    omega = rng.uniform(-1.0, 1.0)
    return State(theta, omega)


def trajectory_rng(dataset_seed: int, traj_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([dataset_seed, traj_id]))


def generate_trajectory(traj_id: int, dataset_seed: int, horizon: int = DEFAULT_HORIZON) -> Trajectory:
    """Generate one mixed trajectory; deterministic in (dataset_seed, traj_id)."""
    if horizon % 2 != 0:
        raise ValueError(f"horizon must be even, got {horizon}")
    seg = horizon // 2
    rng = trajectory_rng(dataset_seed, traj_id)
    initial = sample_initial_state(rng)
    expert_first = bool(rng.random() < 0.5)
    first, second = (expert_policy, failure_policy) if expert_first else (failure_policy, expert_policy)
    r1 = rollout(first, initial, seg)
    r2 = rollout(second, r1.final_state, seg)
    return Trajectory(
        traj_id=traj_id,
        thetas=np.concatenate([r1.thetas, r2.thetas]),
        omegas=np.concatenate([r1.omegas, r2.omegas]),
        torques=np.concatenate([r1.torques, r2.torques]),
        rewards=np.concatenate([r1.rewards, r2.rewards]),
        segment_order=EXPERT_FIRST if expert_first else FAILURE_FIRST,
    )


def _segment_gate_stats(trajectories: list[Trajectory]) -> dict[str, float]:
    """Fraction of expert/failure segments parked at their target at the end."""
    expert_ok = expert_n = failure_ok = failure_n = 0
    for traj in trajectories:
        seg = len(traj) // 2
        halves = ((0, seg), (seg, len(traj)))
        order = (
            ("expert", "failure") if traj.segment_order == EXPERT_FIRST else ("failure", "expert")
        )
        for (start, stop), kind in zip(halves, order):
            tail = traj.thetas[stop - GATE_WINDOW : stop]
            if kind == "expert":
                expert_n += 1
                expert_ok += bool(np.all(np.abs(tail) < EXPERT_GATE_ANGLE))
            else:
                failure_n += 1
                err = np.abs(wrap_angles(tail - math.pi))
                failure_ok += bool(np.all(err < FAILURE_GATE_ANGLE))
    return {
        "expert_segments_parked_fraction": expert_ok / expert_n,
        "failure_segments_parked_fraction": failure_ok / failure_n,
    }


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _format_record(traj_id: int, t: int, theta: float, omega: float, torque: float, reward: float) -> str:
    # Hand-formatted JSON object: repr() of a finite Python float is valid
    # JSON and round-trips exactly; an order of magnitude faster than
    # json.dumps over 300k records.
    return (
        f'{{"traj_id":{traj_id},"t":{t},"theta":{theta!r},"omega":{omega!r},'
        f'"torque":{torque!r},"reward":{reward!r}}}'
    )


def generate_dataset(
    out_dir: str | Path,
    n_traj: int = DEFAULT_N_TRAJ,
    horizon: int = DEFAULT_HORIZON,
    seed: int = 0,
) -> tuple[Dataset, DatasetManifest]:
    """Generate, gate-check, and write the dataset; returns it in memory too."""
    if horizon % 2 != 0:
        raise ValueError(f"horizon must be even, got {horizon}")
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    trajectories = [generate_trajectory(i, seed, horizon) for i in range(n_traj)]

    gates = _segment_gate_stats(trajectories)
    for name, frac in gates.items():
        if frac < GATE_MIN_FRACTION:
            raise DatasetGateError(
                f"dataset gate failed: {name} = {frac:.3f} < {GATE_MIN_FRACTION}"
            )

    data_path = out / DATA_FILE
    with open(data_path, "w", encoding="ascii") as fh:
        for traj in trajectories:
            rows = zip(
                traj.thetas.tolist(),
                traj.omegas.tolist(),
                traj.torques.tolist(),
                traj.rewards.tolist(),
            )
            for t, (th, om, tq, rw) in enumerate(rows):
                fh.write(_format_record(traj.traj_id, t, th, om, tq, rw) + "\n")

    labels_path = out / LABELS_FILE
    with open(labels_path, "w", encoding="ascii") as fh:
        for traj in trajectories:
            fh.write(json.dumps({"traj_id": traj.traj_id, "segment_order": traj.segment_order}) + "\n")

    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        trajectory_count=n_traj,
        horizon=horizon,
        seed=seed,
        policies={"expert": EXPERT_POLICY_ID, "failure": FAILURE_POLICY_ID},
        files={DATA_FILE: _sha256(data_path), LABELS_FILE: _sha256(labels_path)},
        gates=gates,
    )
    (out / MANIFEST_FILE).write_text(manifest.to_json())

    dataset = Dataset(trajectories=trajectories, horizon=horizon, checksum=manifest.files[DATA_FILE])
    return dataset, manifest


def load_manifest(data_dir: str | Path) -> DatasetManifest:
    return DatasetManifest.from_json((Path(data_dir) / MANIFEST_FILE).read_text())


def load_dataset(data_dir: str | Path, verify: bool = True) -> Dataset:
    """Load the training data files; ground-truth labels stay in the sidecar."""
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    data_path = data_dir / DATA_FILE
    checksum = _sha256(data_path)
    if verify and checksum != manifest.files.get(DATA_FILE):
        raise ValueError(f"data file checksum mismatch in {data_dir}")

    per_traj: dict[int, list[tuple[int, float, float, float, float]]] = {}
    with open(data_path, "r", encoding="ascii") as fh:
        for line in fh:
            rec = json.loads(line)
            per_traj.setdefault(rec["traj_id"], []).append(
                (rec["t"], rec["theta"], rec["omega"], rec["torque"], rec["reward"])
            )

    trajectories = []
    for traj_id in sorted(per_traj):
        rows = sorted(per_traj[traj_id])
        arr = np.asarray(rows, dtype=np.float64)
        trajectories.append(
            Trajectory(
                traj_id=traj_id,
                thetas=arr[:, 1],
                omegas=arr[:, 2],
                torques=arr[:, 3],
                rewards=arr[:, 4],
            )
        )

    dataset = Dataset(trajectories=trajectories, horizon=manifest.horizon, checksum=checksum)
    if verify and dataset.record_count != manifest.trajectory_count * manifest.horizon:
        raise ValueError(
            f"record count {dataset.record_count} does not match manifest "
            f"{manifest.trajectory_count} x {manifest.horizon}"
        )
    return dataset


def load_labels(data_dir: str | Path) -> dict[int, str]:
    """Ground-truth segment ordering (evaluation only; never used in training)."""
    labels = {}
    with open(Path(data_dir) / LABELS_FILE, "r", encoding="ascii") as fh:
        for line in fh:
            rec = json.loads(line)
            labels[rec["traj_id"]] = rec["segment_order"]
    return labels
