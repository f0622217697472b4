"""Synthetic identity-confounded ICU cohort generator.

Each patient carries a latent physiology trace (mean-reverting walk, plus a
deterioration drift for cases that grows toward the event), a unit-norm
identity vector drawn around one of K cluster centroids, and per-window
embeddings that mix latent state and identity through a fixed linear map.
Four frozen nonlinear teachers read noisy latent estimates back out of the
embeddings to produce pseudo-lab traces.

The memorization trap: identity clusters correlate with the case label at
strength `confound_strength` among the patients destined for the training
split, and are independent of the label among test-designated patients.
The designated sides are computed with the same deterministic stratified
routine `split_stratified` uses, so the default harness split reproduces
them exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .losses import SurvivalTarget

LAB_NAMES = ("lac", "na", "trop", "k")


@dataclass(frozen=True)
class GeneratorConfig:
    n_cases: int = 200
    n_controls: int = 1000
    seed: int = 0
    identity_clusters: int = 6
    confound_strength: float = 0.0   # rho: train-split cluster/label coupling
    deterioration_gain: float = 2.4
    ramp_power: float = 1.0      # drift ramp shape; 1 = linear growth to the event
    case_offset: float = 0.0
    embed_noise: float = 0.3
    teacher_noise: float = 0.1
    pvector_noise: float = 0.05
    pvector_scale: float = 10.0  # norm of the identity targets (adversary pressure)
    latent_step_noise: float = 0.2
    mean_reversion: float = 0.1      # per-step pull toward the latent mean
    within_cluster_sigma: float = 0.5
    physio_gain: float = 1.0
    identity_gain: float = 0.6
    latent_dim: int = 4
    embed_dim: int = 16
    windows_per_hour: int = 12
    pvector_dim: int = 128
    span_hours: int = 24             # hours of windows stored per patient
    train_fraction: float = 0.8

    def __post_init__(self) -> None:
        if not (0.0 <= self.confound_strength <= 1.0):
            raise ValueError("confound_strength must lie in [0, 1]")
        for name in ("n_cases", "n_controls", "identity_clusters", "latent_dim",
                     "embed_dim", "windows_per_hour", "pvector_dim", "span_hours"):
            if getattr(self, name) < 1:
                raise ValueError(f"GeneratorConfig.{name} must be >= 1")
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must lie in (0, 1)")

    @property
    def n_windows(self) -> int:
        return self.span_hours * self.windows_per_hour


@dataclass
class CohortRecord:
    """One synthetic patient.

    `event_time` is the event onset for cases and the end-of-stay censor
    time for controls, in hours from stay start. Windows span the 24 hours
    ending one hour before that anchor. `latent` is kept for oracle tests;
    `cluster` and `split_hint` are generator diagnostics.
    """

    patient_id: int
    is_case: bool
    event_time: float
    embeddings: np.ndarray          # (n_windows, embed_dim)
    pvector: np.ndarray             # (pvector_dim,)
    labs: dict[str, np.ndarray]     # each (n_windows,)
    latent: np.ndarray | None       # (n_windows, latent_dim)
    cluster: int
    split_hint: str


# -- deterministic hash noise -------------------------------------------------

_SM_C1 = np.uint64(0x9E3779B97F4A7C15)
_SM_C2 = np.uint64(0xBF58476D1CE4E5B9)
_SM_C3 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = (x + _SM_C1).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _SM_C2
    z = (z ^ (z >> np.uint64(27))) * _SM_C3
    return z ^ (z >> np.uint64(31))


def _hash_rows_normal(rows: np.ndarray, salt: int) -> np.ndarray:
    """One standard normal per row, a pure function of the row bytes and salt."""
    bits = np.ascontiguousarray(rows, dtype=np.float64).view(np.uint64)
    h = _splitmix64(np.full(bits.shape[0], np.uint64(salt & 0xFFFFFFFFFFFFFFFF)))
    for c in range(bits.shape[1]):
        h = _splitmix64(h ^ bits[:, c])
    u = (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    return norm.ppf(np.clip(u, 1e-15, 1.0 - 1e-15))


# -- frozen teachers -----------------------------------------------------------


class TeacherBank:
    """Four frozen pseudo-lab estimators over embedding windows.

    Each teacher applies the generator's nonlinearity to a least-squares
    latent estimate (pseudo-inverse of the mixing map) and adds a noise
    term that is a fixed function of the window bytes, so repeated calls
    return identical values and no gradient ever flows here.
    """

    def __init__(self, cfg: GeneratorConfig) -> None:
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        dx, dp, e = cfg.latent_dim, cfg.pvector_dim, cfg.embed_dim
        self.mix_x = rng.normal(0.0, cfg.physio_gain / math.sqrt(dx), size=(e, dx))
        self.mix_p = rng.normal(0.0, cfg.identity_gain, size=(e, dp))
        full = np.concatenate([self.mix_x, self.mix_p], axis=1)
        self.unmix_x = np.linalg.pinv(full)[:dx]  # (dx, e)
        # consume the same stream a cohort build will continue from
        self._rng_state_after_mixing = rng

    def _latent_estimate(self, windows: np.ndarray) -> np.ndarray:
        return windows @ self.unmix_x.T

    @staticmethod
    def _nonlinearity(lab: str, x: np.ndarray) -> np.ndarray:
        if lab == "lac":
            s = 1.5 * x[..., 0] - 0.5
            return np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))
        if lab == "na":
            return 3.0 * np.tanh(0.7 * x[..., 1])
        if lab == "trop":
            return np.log1p((x[..., 0] + 0.5 * x[..., 2]) ** 2)
        if lab == "k":
            s = x[..., 0] + x[..., 3]
            return 2.0 / (1.0 + np.exp(-s))
        raise KeyError(f"unknown lab {lab!r}")

    def eval_windows(self, lab: str, windows: np.ndarray) -> np.ndarray:
        """Pseudo-lab values for a (N, embed_dim) array of windows."""
        if lab not in LAB_NAMES:
            raise KeyError(f"unknown lab {lab!r}")
        w = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        clean = self._nonlinearity(lab, self._latent_estimate(w))
        salt = (self.cfg.seed * 1000003 + LAB_NAMES.index(lab) + 1) & 0xFFFFFFFFFFFFFFFF
        return clean + self.cfg.teacher_noise * _hash_rows_normal(w, salt)


def teacher_eval(cfg: GeneratorConfig, lab: str, window: np.ndarray) -> float:
    """Frozen pseudo-lab value for one embedding window."""
    return float(TeacherBank(cfg).eval_windows(lab, np.asarray(window)[None])[0])


# -- stratified splitting ------------------------------------------------------


def _stratified_sides(case_ids: Sequence[int], control_ids: Sequence[int],
                      ratio: float, seed: int) -> set[int]:
    """Deterministic train-side id set; shared by the generator and the splitter."""
    if not (0.0 < ratio < 1.0):
        raise ValueError("split ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train: set[int] = set()
    for ids in (sorted(case_ids), sorted(control_ids)):
        if len(ids) < 2:
            raise ValueError("stratified split needs >= 2 patients per class")
        n_train = min(max(int(round(ratio * len(ids))), 1), len(ids) - 1)
        perm = rng.permutation(len(ids))
        train.update(ids[i] for i in perm[:n_train])
    return train


def split_stratified(cohort: Sequence[CohortRecord], ratio: float, seed: int):
    """Patient-level stratified split; same seed gives the same split."""
    cases = [r.patient_id for r in cohort if r.is_case]
    controls = [r.patient_id for r in cohort if not r.is_case]
    train_ids = _stratified_sides(cases, controls, ratio, seed)
    train = [r for r in cohort if r.patient_id in train_ids]
    test = [r for r in cohort if r.patient_id not in train_ids]
    return train, test


# -- cohort generation ----------------------------------------------------------


def _ramp(hours_to_event: np.ndarray, span: float, power: float) -> np.ndarray:
    """Deterioration ramp: 0 at the span edge, 1 at the event."""
    return np.clip((span + 1.0 - hours_to_event) / span, 0.0, 1.0) ** power


def generate_cohort(cfg: GeneratorConfig) -> list[CohortRecord]:
    """Deterministic cohort of n_cases + n_controls patients."""
    teachers = TeacherBank(cfg)
    rng = teachers._rng_state_after_mixing  # continues the seeded stream
    n = cfg.n_cases + cfg.n_controls
    dx, dp, e, w = cfg.latent_dim, cfg.pvector_dim, cfg.embed_dim, cfg.n_windows
    is_case = np.arange(n) < cfg.n_cases

    # anchor = event time (cases) or end of stay (controls), hours from stay start
    anchors = rng.uniform(26.0, 120.0, size=n)

    # identity clusters with the train-side-only label coupling
    case_ids = [int(i) for i in np.flatnonzero(is_case)]
    control_ids = [int(i) for i in np.flatnonzero(~is_case)]
    train_ids = _stratified_sides(case_ids, control_ids, cfg.train_fraction, cfg.seed)
    k = cfg.identity_clusters
    case_aligned = np.arange((k + 1) // 2)
    control_aligned = np.arange((k + 1) // 2, k)
    clusters = np.empty(n, dtype=int)
    for i in range(n):
        aligned = case_aligned if is_case[i] else control_aligned
        if i in train_ids and rng.uniform() < cfg.confound_strength and aligned.size:
            clusters[i] = aligned[rng.integers(aligned.size)]
        else:
            clusters[i] = rng.integers(k)

    centroids = rng.normal(size=(k, dp))
    pvecs = centroids[clusters] + cfg.within_cluster_sigma * rng.normal(size=(n, dp))
    pvecs /= np.linalg.norm(pvecs, axis=1, keepdims=True)
    # adversary targets are scaled up; the embedding mix uses the unit version
    unit_pvecs = pvecs.copy()
    pvecs = cfg.pvector_scale * pvecs

    # latent physiology: stationary mean-reverting walk plus case drift
    a = cfg.mean_reversion
    step = cfg.latent_step_noise
    stat_std = step / math.sqrt(1.0 - (1.0 - a) ** 2)
    latent = np.empty((n, w, dx))
    x = rng.normal(0.0, stat_std, size=(n, dx))
    for j in range(w):
        x = (1.0 - a) * x + step * rng.normal(size=(n, dx))
        latent[:, j, :] = x
    window_ends = cfg.span_hours + 1.0 - (np.arange(w) + 1.0) / cfg.windows_per_hour
    drift = cfg.deterioration_gain * _ramp(window_ends, float(cfg.span_hours), cfg.ramp_power)
    latent[is_case, :, 0] += drift[None, :]
    latent[is_case, :, 1] += cfg.case_offset

    flat_latent = latent.reshape(n * w, dx)
    embeddings = (
        flat_latent @ teachers.mix_x.T
        + np.repeat(unit_pvecs, w, axis=0) @ teachers.mix_p.T
        + cfg.embed_noise * rng.normal(size=(n * w, e))
    ).reshape(n, w, e)

    labs = {
        lab: teachers.eval_windows(lab, embeddings.reshape(n * w, e)).reshape(n, w)
        for lab in LAB_NAMES
    }

    records = []
    for i in range(n):
        records.append(
            CohortRecord(
                patient_id=i,
                is_case=bool(is_case[i]),
                event_time=float(anchors[i]),
                embeddings=embeddings[i],
                pvector=pvecs[i],
                labs={lab: labs[lab][i] for lab in LAB_NAMES},
                latent=latent[i],
                cluster=int(clusters[i]),
                split_hint="train" if i in train_ids else "test",
            )
        )
    return records


def lead_window(record: CohortRecord, lead_hours: int, windows_per_hour: int) -> np.ndarray:
    """The 1-hour embedding slice ending `lead_hours` before the anchor."""
    span = record.embeddings.shape[0] // windows_per_hour
    if not (1 <= lead_hours <= span):
        raise ValueError(f"lead_hours must lie in [1, {span}]")
    stop = (span + 1 - lead_hours) * windows_per_hour
    return record.embeddings[stop - windows_per_hour : stop]


def empirical_cluster_label_correlation(records: Iterable[CohortRecord],
                                        identity_clusters: int) -> float:
    """Pearson r between case-aligned-cluster membership and the case label."""
    recs = list(records)
    aligned_cut = (identity_clusters + 1) // 2
    g = np.array([1.0 if r.cluster < aligned_cut else 0.0 for r in recs])
    y = np.array([1.0 if r.is_case else 0.0 for r in recs])
    if g.std() == 0.0 or y.std() == 0.0:
        return 0.0
    return float(np.corrcoef(g, y)[0, 1])


# -- survival targets ------------------------------------------------------------


def make_survival_targets(t0: float, anchor_time: float, delta_t: float,
                          bins: int, is_event: bool = True) -> SurvivalTarget:
    """Discrete event/censor labels for a window ending at t0.

    Events use the ceiling convention: an event exactly k*delta_t ahead
    falls in bin k. Cases observe bins up to and including the event bin
    (capped at `bins`); controls observe bins up to the censor bin.
    """
    y = np.zeros(bins, dtype=np.int64)
    m = np.zeros(bins, dtype=np.int64)
    if is_event:
        if anchor_time <= t0:
            raise ValueError("make_survival_targets: event time must be after t0")
        l_star = math.ceil((anchor_time - t0) / delta_t)
        if l_star <= bins:
            y[l_star - 1] = 1
        m[: min(l_star, bins)] = 1
    else:
        if anchor_time < t0:
            raise ValueError("make_survival_targets: censor time must be >= t0")
        observed = math.ceil((anchor_time - t0) / delta_t)
        m[: min(observed, bins)] = 1
    return SurvivalTarget(y=y, m=m)


# -- JSONL interchange ------------------------------------------------------------


def write_cohort_jsonl(records: Sequence[CohortRecord], path, include_latent: bool = True) -> None:
    with open(path, "w") as fh:
        for r in records:
            row = {
                "id": r.patient_id,
                "is_case": r.is_case,
                "event_time": r.event_time,
                "embeddings": r.embeddings.tolist(),
                "pvector": r.pvector.tolist(),
                "labs": {lab: r.labs[lab].tolist() for lab in LAB_NAMES},
                "latent": r.latent.tolist() if include_latent and r.latent is not None else None,
                "cluster": r.cluster,
                "split_hint": r.split_hint,
            }
            fh.write(json.dumps(row) + "\n")


def read_cohort_jsonl(path) -> list[CohortRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            records.append(
                CohortRecord(
                    patient_id=int(row["id"]),
                    is_case=bool(row["is_case"]),
                    event_time=float(row["event_time"]),
                    embeddings=np.asarray(row["embeddings"], dtype=np.float64),
                    pvector=np.asarray(row["pvector"], dtype=np.float64),
                    labs={lab: np.asarray(row["labs"][lab], dtype=np.float64) for lab in LAB_NAMES},
                    latent=None if row.get("latent") is None else np.asarray(row["latent"], dtype=np.float64),
                    cluster=int(row.get("cluster", -1)),
                    split_hint=str(row.get("split_hint", "")),
                )
            )
    return records
