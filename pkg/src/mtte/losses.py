"""Loss terms and composite objectives, each recorded as a tape scalar.

Batch conventions: classifier/TTE/lab heads produce (B, 1) columns, hazard
logits are (B, L), adversary outputs (B, d_p). Targets are plain numpy
arrays of matching shape. Every loss returns a scalar VarHandle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, VarHandle

PRESETS = (
    "baseline",
    "tte_reg",
    "tte_survival",
    "pvector",
    "pseudo_lac",
    "pseudo_na",
    "pseudo_trop",
    "pseudo_k",
    "all",
)


class MissingLossPartError(KeyError):
    def __init__(self, preset: str, part: str) -> None:
        self.part = part
        super().__init__(f"preset {preset!r} requires loss part {part!r}")


@dataclass(frozen=True)
class LossWeights:
    lam_reg: float = 1.0
    lam_surv: float = 1.0
    lam_smooth: float = 0.001
    lam_group: float = 0.0001
    lam_adv: float = 0.1
    lam_lab: float = 2.0
    group_eps: float = 1e-8
    huber_delta: float = 1.0  # in normalized time units

    def __post_init__(self) -> None:
        for name in ("lam_reg", "lam_surv", "lam_smooth", "lam_group", "lam_adv", "lam_lab"):
            if getattr(self, name) < 0:
                raise ValueError(f"LossWeights.{name} must be >= 0")
        if self.group_eps <= 0:
            raise ValueError("LossWeights.group_eps must be positive")


@dataclass(frozen=True)
class SurvivalTarget:
    """Per-sample event indicators y and at-risk prefix mask m over L bins."""

    y: np.ndarray
    m: np.ndarray

    def __post_init__(self) -> None:
        y, m = np.asarray(self.y), np.asarray(self.m)
        if y.shape != m.shape:
            raise ValueError("SurvivalTarget: y and m shapes differ")
        if y.sum() > 1:
            raise ValueError("SurvivalTarget: at most one event bin")
        if np.any((y == 1) & (m == 0)):
            raise ValueError("SurvivalTarget: event bin must be observed")
        if np.any(np.diff(m.astype(int)) > 0):
            raise ValueError("SurvivalTarget: m must be a prefix mask")


def bce_logits(tape: Tape, logits: VarHandle, labels: np.ndarray) -> VarHandle:
    """Mean of softplus(s) - y*s over the batch (overflow-safe BCE)."""
    y = np.asarray(labels, dtype=np.float64).reshape(logits.value.shape)
    if y.size == 0:
        raise ValueError("bce_logits: empty batch")
    ys = tape.mul(tape.leaf(y), logits)
    return tape.mean(tape.sub(tape.softplus(logits), ys))


def tte_masked(
    tape: Tape,
    pred: VarHandle,
    target: np.ndarray,
    positive_mask: np.ndarray,
    kind: str = "l1",
    huber_delta: float = 1.0,
) -> VarHandle:
    """Masked mean residual over positives; zero (no gradient) when none."""
    t = np.asarray(target, dtype=np.float64).reshape(pred.value.shape)
    m = np.asarray(positive_mask, dtype=np.float64).reshape(pred.value.shape)
    n_pos = m.sum()
    if n_pos == 0:
        return tape.leaf(0.0)
    r = tape.sub(pred, tape.leaf(t))
    if kind == "l1":
        rho = tape.abs(r)
    elif kind == "mse":
        rho = tape.mul(r, r)
    elif kind == "huber":
        a = np.abs(r.value)
        small = (a <= huber_delta).astype(np.float64)
        sq = tape.scale(tape.mul(r, r), 0.5)
        lin = tape.scale(tape.sub(tape.abs(r), tape.leaf(np.full_like(a, 0.5 * huber_delta))), huber_delta)
        rho = tape.add(tape.mul(tape.leaf(small), sq), tape.mul(tape.leaf(1.0 - small), lin))
    else:
        raise ValueError(f"tte_masked: unknown kind {kind!r}")
    return tape.scale(tape.masked_sum(rho, m), 1.0 / n_pos)


def surv_masked_bce(
    tape: Tape,
    eta: VarHandle,
    y: np.ndarray,
    m: np.ndarray,
    normalizer: str = "batch",
) -> VarHandle:
    """Per-bin BCE on hazard logits, censored bins excluded by m.

    `normalizer="batch"` divides by the total observed-bin count;
    `"per_sample"` normalizes each sample by its own count, then averages.
    """
    y = np.asarray(y, dtype=np.float64).reshape(eta.value.shape)
    m = np.asarray(m, dtype=np.float64).reshape(eta.value.shape)
    if m.sum() == 0:
        raise ValueError("surv_masked_bce: all bins masked (zero denominator)")
    # y*log(sigma) + (1-y)*log(1-sigma) == -(softplus(eta) - y*eta), stable form
    terms = tape.sub(tape.softplus(eta), tape.mul(tape.leaf(y), eta))
    if normalizer == "batch":
        return tape.scale(tape.masked_sum(terms, m), 1.0 / m.sum())
    if normalizer == "per_sample":
        flat_m = m.reshape(-1, m.shape[-1]) if m.ndim > 1 else m[None]
        counts = flat_m.sum(axis=1)
        weights = np.zeros_like(flat_m)
        alive = counts > 0
        weights[alive] = flat_m[alive] / counts[alive, None]
        weights /= alive.sum()
        return tape.masked_sum(terms, weights.reshape(m.shape))
    raise ValueError(f"surv_masked_bce: unknown normalizer {normalizer!r}")


_DIFF_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _selector_matrices(bins: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant matrices for row-diff and per-feature sums of a bin-major (L, D) block."""
    key = (bins, dim)
    if key not in _DIFF_CACHE:
        diff = np.zeros(((bins - 1) * dim, bins * dim)) if bins > 1 else np.zeros((0, bins * dim))
        for l in range(bins - 1):
            for k in range(dim):
                diff[l * dim + k, (l + 1) * dim + k] = 1.0
                diff[l * dim + k, l * dim + k] = -1.0
        group = np.zeros((dim, bins * dim))
        for l in range(bins):
            for k in range(dim):
                group[k, l * dim + k] = 1.0
        _DIFF_CACHE[key] = (diff, group)
    return _DIFF_CACHE[key]


def smoothness_penalty(tape: Tape, hazard_w: VarHandle) -> VarHandle:
    """Sum of squared differences between adjacent time-bin weight vectors."""
    bins, dim = hazard_w.value.shape
    if bins == 1:
        return tape.leaf(0.0)
    diff_mat, _ = _selector_matrices(bins, dim)
    flat = tape.reshape(hazard_w, (bins * dim,))
    d = tape.affine(tape.leaf(diff_mat), flat, tape.leaf(np.zeros(diff_mat.shape[0])))
    return tape.sum(tape.mul(d, d))


def group_lasso(tape: Tape, hazard_w: VarHandle, eps: float) -> VarHandle:
    """Sum over features of the 2-norm of that feature's weights across bins."""
    if eps <= 0:
        raise ValueError("group_lasso: eps must be positive")
    bins, dim = hazard_w.value.shape
    _, group_mat = _selector_matrices(bins, dim)
    sq = tape.reshape(tape.mul(hazard_w, hazard_w), (bins * dim,))
    per_feature = tape.affine(tape.leaf(group_mat), sq, tape.leaf(np.full(dim, eps)))
    return tape.sum(tape.sqrt(per_feature))


def adversary_mse(tape: Tape, pred: VarHandle, target: np.ndarray) -> VarHandle:
    """Batch-mean squared norm of the p-vector residual."""
    p = np.asarray(target, dtype=np.float64).reshape(pred.value.shape)
    batch = p.shape[0] if p.ndim > 1 else 1
    r = tape.sub(pred, tape.leaf(p))
    return tape.scale(tape.sum(tape.mul(r, r)), 1.0 / batch)


def pseudo_lab_mse(tape: Tape, pred: VarHandle, teacher_value: np.ndarray) -> VarHandle:
    """Batch-mean squared error against a frozen teacher's pseudo labels."""
    v = np.asarray(teacher_value, dtype=np.float64).reshape(pred.value.shape)
    batch = v.shape[0] if v.ndim > 1 else 1
    r = tape.sub(pred, tape.leaf(v))
    return tape.scale(tape.sum(tape.mul(r, r)), 1.0 / batch)


def preset_parts(preset: str) -> tuple[str, ...]:
    """Loss part names a preset requires (beyond the always-present 'cls')."""
    table = {
        "baseline": (),
        "tte_reg": ("reg",),
        "tte_survival": ("surv", "smooth", "group"),
        "pvector": ("pvec",),
        "pseudo_lac": ("lab_lac",),
        "pseudo_na": ("lab_na",),
        "pseudo_trop": ("lab_trop",),
        "pseudo_k": ("lab_k",),
        "all": ("reg", "pvec", "lab_lac", "lab_na", "lab_trop", "lab_k"),
    }
    if preset not in table:
        raise ValueError(f"unknown preset {preset!r}")
    return ("cls",) + table[preset]


_PART_WEIGHT = {
    "cls": lambda w: 1.0,
    "reg": lambda w: w.lam_reg,
    "surv": lambda w: w.lam_surv,
    "smooth": lambda w: w.lam_smooth,
    "group": lambda w: w.lam_group,
    "pvec": lambda w: w.lam_adv,
    "lab_lac": lambda w: w.lam_lab,
    "lab_na": lambda w: w.lam_lab,
    "lab_trop": lambda w: w.lam_lab,
    "lab_k": lambda w: w.lam_lab,
}


def part_weight(part: str, weights: LossWeights) -> float:
    return _PART_WEIGHT[part](weights)


def compose_total(
    tape: Tape,
    parts: dict[str, VarHandle],
    weights: LossWeights,
    preset: str,
) -> VarHandle:
    """Weighted sum of the preset's loss parts."""
    total: VarHandle | None = None
    for name in preset_parts(preset):
        if name not in parts:
            raise MissingLossPartError(preset, name)
        term = tape.scale(parts[name], part_weight(name, weights))
        total = term if total is None else tape.add(total, term)
    assert total is not None
    return total
