"""Per-task gradient surgery (PCGrad), weighting strategies, and conflict telemetry.

Task gradients are flat float64 vectors over the shared (aggregator)
parameters, in a fixed key order. The canonical task order is CA, TTE,
LAB, ID; the LAB gradient is the sum over the four lab losses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tape, VarHandle

TASK_ORDER = ("CA", "TTE", "LAB", "ID")

CONFLICT_CSV_COLUMNS = (
    "step",
    "r_t",
    "cos_CA_TTE",
    "cos_CA_LAB",
    "cos_CA_ID",
    "cos_TTE_LAB",
    "cos_TTE_ID",
    "cos_LAB_ID",
)

_PAIR_COLUMNS = tuple(c for c in CONFLICT_CSV_COLUMNS[2:])


@dataclass(frozen=True)
class TaskGradient:
    task: str
    g: np.ndarray

    def __post_init__(self) -> None:
        if not np.isfinite(self.g).all():
            raise ValueError(f"TaskGradient[{self.task}]: non-finite entries")


@dataclass(frozen=True)
class ConflictRecord:
    step: int
    tasks: tuple
    pairwise_cos: np.ndarray  # K x K, unit diagonal
    conflict_rate: float


def cosine(g_i: np.ndarray, g_j: np.ndarray) -> float:
    """Cosine of two gradients; zero-norm inputs are defined as cosine 0."""
    if g_i.shape != g_j.shape:
        raise ValueError("cosine: gradient lengths differ")
    ni, nj = np.linalg.norm(g_i), np.linalg.norm(g_j)
    if ni == 0.0 or nj == 0.0:
        return 0.0
    return float(g_i @ g_j / (ni * nj))


def pcgrad_project(g_i: np.ndarray, g_j: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Remove g_i's conflicting component along g_j; identity when no conflict."""
    if g_i.shape != g_j.shape:
        raise ValueError("pcgrad_project: gradient lengths differ")
    dot = float(g_i @ g_j)
    if dot >= 0.0:
        return g_i
    return g_i - (dot / (float(g_j @ g_j) + eps)) * g_j


def pcgrad_step(
    grads: Sequence[TaskGradient],
    order: str = "fixed",
    seed: int | None = None,
    eps: float = 1e-12,
) -> np.ndarray:
    """Project every task against the other tasks' original gradients, then average.

    `order="fixed"` visits the others in declaration order; `"seeded_shuffle"`
    shuffles the visit order per task with a seeded generator.
    """
    if len(grads) < 2:
        raise ValueError("pcgrad_step: need at least two tasks")
    length = grads[0].g.shape
    for tg in grads:
        if tg.g.shape != length:
            raise ValueError("pcgrad_step: mismatched gradient lengths")
    if order not in ("fixed", "seeded_shuffle"):
        raise ValueError(f"pcgrad_step: unknown order {order!r}")
    rng = np.random.default_rng(seed) if order == "seeded_shuffle" else None

    originals = [tg.g for tg in grads]
    projected = []
    for i, tg in enumerate(grads):
        others = [j for j in range(len(grads)) if j != i]
        if rng is not None:
            rng.shuffle(others)
        g = tg.g
        for j in others:
            g = pcgrad_project(g, originals[j], eps=eps)
        projected.append(g)
    return np.mean(projected, axis=0)


def pairwise_cosines(grads: Sequence[TaskGradient]) -> np.ndarray:
    """K x K symmetric cosine matrix with unit diagonal."""
    k = len(grads)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = cosine(grads[i].g, grads[j].g)
    return out


def conflict_rate(pairwise_cos: np.ndarray, k: int) -> float:
    """Fraction of task pairs with negative cosine."""
    if k < 2:
        raise ValueError("conflict_rate: need K >= 2")
    iu = np.triu_indices(k, 1)
    negative = int((pairwise_cos[iu] < 0.0).sum())
    return 2.0 * negative / (k * (k - 1))


def make_conflict_record(step: int, grads: Sequence[TaskGradient]) -> ConflictRecord:
    cos = pairwise_cosines(grads)
    return ConflictRecord(
        step=step,
        tasks=tuple(tg.task for tg in grads),
        pairwise_cos=cos,
        conflict_rate=conflict_rate(cos, len(grads)),
    )


def write_conflict_csv(records: Sequence[ConflictRecord], path) -> None:
    """Fixed-schema CSV; cosine cells for task pairs absent from a record stay empty."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONFLICT_CSV_COLUMNS)
        for rec in records:
            index = {t: i for i, t in enumerate(rec.tasks)}
            row: list = [rec.step, repr(float(rec.conflict_rate))]
            for col in _PAIR_COLUMNS:
                _, a, b = col.split("_")
                if a in index and b in index:
                    row.append(repr(float(rec.pairwise_cos[index[a], index[b]])))
                else:
                    row.append("")
            writer.writerow(row)


def read_conflict_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CONFLICT_CSV_COLUMNS:
            raise ValueError(f"conflict CSV schema mismatch: {reader.fieldnames}")
        rows = []
        for raw in reader:
            row: dict = {"step": int(raw["step"]), "r_t": float(raw["r_t"])}
            for col in _PAIR_COLUMNS:
                row[col] = float(raw[col]) if raw[col] != "" else None
            rows.append(row)
    return rows


def uncertainty_weighting(
    tape: Tape,
    losses: dict[str, VarHandle],
    log_vars: dict[str, VarHandle],
) -> VarHandle:
    """Homoscedastic-uncertainty total: sum_i exp(-s_i) * L_i + s_i.

    The s_i handles stay on the tape and receive gradients.
    """
    if set(losses) != set(log_vars):
        raise ValueError("uncertainty_weighting: losses and log_vars must share keys")
    total: VarHandle | None = None
    for name in sorted(losses):
        s = log_vars[name]
        term = tape.add(tape.mul(tape.exp(tape.scale(s, -1.0)), losses[name]), s)
        total = term if total is None else tape.add(total, term)
    assert total is not None
    return total
