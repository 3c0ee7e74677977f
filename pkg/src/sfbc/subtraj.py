"""Sub-trajectory decomposition, threshold + retrospective filtering, and
weighted-sample emission.

Trajectories are cut into equal-length segments (trailing remainder steps are
dropped). A segment survives filtering when its success probability clears
the threshold and, under retrospective filtering, its successor does too --
the successor check drops segments that precede failures. Surviving segments
emit one weighted (state, action) sample per step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datagen import Dataset


class FilterError(RuntimeError):
    """Filtering produced no training data (threshold too high or bad scores)."""


@dataclass(frozen=True)
class SubTrajectory:
    traj_id: int
    index: int
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class FilterConfig:
    alpha: float = 0.1
    retrospective: bool = True
    use_weighting: bool = True
    markov_only: bool = False
    filtering_enabled: bool = True
    # The success check for the final segment has no successor to consult;
    # by default it is retained on its own threshold alone.
    keep_last: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")


def segment_bounds(n_steps: int, segment_length: int) -> list[tuple[int, int]]:
    """(start, length) pairs of the equal-length segments covering a trajectory."""
    if segment_length < 2:
        raise ValueError(f"segment_length must be >= 2, got {segment_length}")
    if segment_length > n_steps:
        raise ValueError(f"segment_length {segment_length} exceeds trajectory length {n_steps}")
    n = n_steps // segment_length
    return [(i * segment_length, segment_length) for i in range(n)]


def decompose(
    traj_id: int,
    n_steps: int,
    segment_length: int | None = None,
    count: int | None = None,
) -> list[SubTrajectory]:
    """Cut a trajectory into equal-length sub-trajectories.

    Exactly one of `segment_length` and `count` must be given; `count` n maps
    to segment length floor(T / n). Remainder steps past the last full
    segment are dropped.
    """
    if (segment_length is None) == (count is None):
        raise ValueError("pass exactly one of segment_length or count")
    if count is not None:
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        segment_length = n_steps // count
        if segment_length < 2:
            raise ValueError(f"count {count} leaves segments shorter than 2 steps")
    return [
        SubTrajectory(traj_id, i, start, length)
        for i, (start, length) in enumerate(segment_bounds(n_steps, segment_length))
    ]


def filter_retrospective(p_values: Sequence[float], cfg: FilterConfig) -> list[int]:
    """Indices of segments retained under the threshold / successor rule."""
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"success probability {p} outside [0, 1]")
    n = len(p_values)
    if not cfg.filtering_enabled:
        return list(range(n))
    passing = [p >= cfg.alpha for p in p_values]
    retained = []
    for i in range(n):
        if not passing[i]:
            continue
        if cfg.retrospective:
            if i == n - 1:
                if not cfg.keep_last:
                    continue
            elif not passing[i + 1]:
                continue
        retained.append(i)
    return retained


@dataclass
class StageCounts:
    """Bookkeeping for pipeline-integrity reporting."""

    total_records: int = 0
    remainder_records_dropped: int = 0
    segments_total: int = 0
    segments_threshold_dropped: int = 0
    segments_retrospective_dropped: int = 0
    segments_retained: int = 0
    samples: int = 0


@dataclass
class WeightedDataset:
    """Flat training arrays; row order is (traj_id, segment index, t)."""

    thetas: np.ndarray
    omegas: np.ndarray
    torques: np.ndarray
    weights: np.ndarray
    traj_ids: np.ndarray
    seg_indices: np.ndarray
    steps: np.ndarray
    counts: StageCounts

    def __len__(self) -> int:
        return len(self.thetas)


def build_weighted_dataset(
    dataset: Dataset,
    annotations: Mapping[tuple[int, int], "object"] | None,
    cfg: FilterConfig,
    segment_length: int,
) -> WeightedDataset:
    """Apply filtering and emit one weighted sample per retained step.

    `annotations` maps (traj_id, segment index) to an annotation carrying
    p_vlm / p_markov. It may be None only when the configuration consults
    neither (filtering and weighting both off).
    """
    needs_scores = cfg.filtering_enabled or cfg.use_weighting
    if annotations is None and needs_scores:
        raise ValueError("this filter configuration requires annotations")

    counts = StageCounts()
    rows_theta: list[np.ndarray] = []
    rows_omega: list[np.ndarray] = []
    rows_torque: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    ids: list[np.ndarray] = []
    segs: list[np.ndarray] = []
    steps: list[np.ndarray] = []

    for traj in dataset.trajectories:
        bounds = segment_bounds(len(traj), segment_length)
        n = len(bounds)
        counts.total_records += len(traj)
        counts.remainder_records_dropped += len(traj) - n * segment_length
        counts.segments_total += n

        if needs_scores:
            p_values = []
            for i in range(n):
                ann = annotations.get((traj.traj_id, i))
                if ann is None:
                    raise ValueError(
                        f"missing annotation for trajectory {traj.traj_id} segment {i}"
                    )
                p_values.append(ann.p_markov if cfg.markov_only else ann.p_vlm)
            retained = filter_retrospective(p_values, cfg)
            passing = sum(p >= cfg.alpha for p in p_values)
            if cfg.filtering_enabled:
                counts.segments_threshold_dropped += n - passing
                counts.segments_retrospective_dropped += passing - len(retained)
        else:
            p_values = [1.0] * n
            retained = list(range(n))

        counts.segments_retained += len(retained)
        for i in retained:
            start, length = bounds[i]
            sl = slice(start, start + length)
            w = p_values[i] if cfg.use_weighting else 1.0
            rows_theta.append(traj.thetas[sl])
            rows_omega.append(traj.omegas[sl])
            rows_torque.append(traj.torques[sl])
            weights.append(np.full(length, w))
            ids.append(np.full(length, traj.traj_id, dtype=np.int64))
            segs.append(np.full(length, i, dtype=np.int64))
            steps.append(np.arange(start, start + length, dtype=np.int64))

    if not rows_theta:
        raise FilterError(
            "filtering retained no samples: alpha may be too high or the "
            "annotator is scoring everything as failure"
        )

    counts.samples = int(sum(len(r) for r in rows_theta))
    return WeightedDataset(
        thetas=np.concatenate(rows_theta),
        omegas=np.concatenate(rows_omega),
        torques=np.concatenate(rows_torque),
        weights=np.concatenate(weights),
        traj_ids=np.concatenate(ids),
        seg_indices=np.concatenate(segs),
        steps=np.concatenate(steps),
        counts=counts,
    )


def save_weighted_dataset(weighted: WeightedDataset, path: str | Path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        rows = zip(
            weighted.thetas.tolist(),
            weighted.omegas.tolist(),
            weighted.torques.tolist(),
            weighted.weights.tolist(),
            weighted.traj_ids.tolist(),
            weighted.seg_indices.tolist(),
            weighted.steps.tolist(),
        )
        for th, om, tq, w, tid, i, t in rows:
            fh.write(
                f'{{"theta":{th!r},"omega":{om!r},"torque":{tq!r},"weight":{w!r},'
                f'"traj_id":{tid},"i":{i},"t":{t}}}\n'
            )


def load_weighted_dataset(path: str | Path) -> WeightedDataset:
    cols: list[list] = [[], [], [], [], [], [], []]
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            rec = json.loads(line)
            for col, key in zip(cols, ("theta", "omega", "torque", "weight", "traj_id", "i", "t")):
                col.append(rec[key])
    counts = StageCounts(samples=len(cols[0]))
    return WeightedDataset(
        thetas=np.asarray(cols[0], dtype=np.float64),
        omegas=np.asarray(cols[1], dtype=np.float64),
        torques=np.asarray(cols[2], dtype=np.float64),
        weights=np.asarray(cols[3], dtype=np.float64),
        traj_ids=np.asarray(cols[4], dtype=np.int64),
        seg_indices=np.asarray(cols[5], dtype=np.int64),
        steps=np.asarray(cols[6], dtype=np.int64),
        counts=counts,
    )
