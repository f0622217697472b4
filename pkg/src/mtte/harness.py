"""Training loop, experiment presets, per-lead-time evaluation, and artifacts.

A training sample is one (patient, lead-window) pair: the 1-hour embedding
slice ending `lead` hours before the patient's anchor (event onset for
cases, end of stay for controls). All lead positions 1..span are exposed
during training and evaluated separately at test time.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import losses as L
from .autodiff import Tape
from .datagen import (
    LAB_NAMES,
    GeneratorConfig,
    generate_cohort,
    lead_window,
    make_survival_targets,
    split_stratified,
)
from .metrics import LeadTimeReport, LeadTimeRow, auprc, auroc, tte_mae, write_report_csv
from .model import (
    ModelConfig,
    bind_params,
    forward_context,
    forward_heads,
    init_params,
    save_params,
    shared_param_names,
)
from .surgery import (
    ConflictRecord,
    TaskGradient,
    make_conflict_record,
    pcgrad_step,
    write_conflict_csv,
)

TASK_PARTS = {
    "CA": ("cls",),
    "TTE": ("reg", "surv", "smooth", "group"),
    "LAB": ("lab_lac", "lab_na", "lab_trop", "lab_k"),
    "ID": ("pvec",),
}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "baseline"
    epochs: int = 50
    batch_size: int = 256
    lr_aggregator: float = 2e-4
    wd_aggregator: float = 1e-3
    lr_heads: float = 1e-5
    wd_heads: float = 0.0
    optimizer: str = "momentum"      # "momentum" | "adam"
    momentum: float = 0.9
    weighting: str = "fixed"         # "fixed" | "uncertainty"
    surgery: str = "none"            # "none" | "pcgrad"
    surgery_order: str = "fixed"     # "fixed" | "seeded_shuffle"
    telemetry: bool = True
    seeds: tuple = (0,)
    split_ratio: float = 0.8
    tte_kind: str = "l1"             # "l1" | "mse" | "huber"
    surv_normalizer: str = "batch"   # "batch" | "per_sample"
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self) -> None:
        if self.preset not in L.PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.optimizer not in ("momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.weighting not in ("fixed", "uncertainty"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.surgery not in ("none", "pcgrad"):
            raise ValueError(f"unknown surgery {self.surgery!r}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        for name in ("embed_dim", "windows_per_hour", "pvector_dim"):
            if getattr(self.model, name) != getattr(self.generator, name):
                raise ValueError(f"model/generator disagree on {name}")


def desk_config(preset: str, seed: int, **overrides) -> ExperimentConfig:
    """Small, fast configuration for desk-scale runs; paper values stay the
    dataclass defaults."""
    gen = GeneratorConfig(n_cases=40, n_controls=200, seed=seed)
    base = dict(
        preset=preset,
        epochs=3,
        batch_size=64,
        optimizer="adam",
        lr_aggregator=3e-3,
        wd_aggregator=1e-3,
        lr_heads=1e-2,
        wd_heads=0.0,
        seeds=(seed,),
        surgery="pcgrad" if preset == "all" else "none",
        generator=gen,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def active_tasks(preset: str) -> tuple:
    parts = set(L.preset_parts(preset))
    return tuple(t for t in ("CA", "TTE", "LAB", "ID") if parts & set(TASK_PARTS[t]))


# -- config (de)serialization -------------------------------------------------

_NESTED = {"model": ModelConfig, "weights": L.LossWeights, "generator": GeneratorConfig}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _NESTED:
            out[f.name] = dict(v.__dict__)
        elif f.name == "seeds":
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Strict parse: every field optional, unknown fields rejected."""
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - top
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    kwargs: dict = {}
    for name, value in doc.items():
        if name in _NESTED:
            cls = _NESTED[name]
            sub = {f.name for f in dataclasses.fields(cls)}
            bad = set(value) - sub
            if bad:
                raise ValueError(f"unknown {name} config fields: {sorted(bad)}")
            kwargs[name] = cls(**value)
        elif name == "seeds":
            kwargs[name] = tuple(int(s) for s in value)
        else:
            kwargs[name] = value
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


# -- sample tensorization ------------------------------------------------------


@dataclass
class SampleSet:
    x: np.ndarray
    label: np.ndarray
    tte_norm: np.ndarray
    surv_y: np.ndarray
    surv_m: np.ndarray
    pvec: np.ndarray
    labs: dict[str, np.ndarray]
    patient: np.ndarray
    lead: np.ndarray
    cluster: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]


def _pvec_noise(pid: int, lead: int, seed: int, dim: int) -> np.ndarray:
    mix = (seed * 1000003 + pid * 7919 + lead) & 0xFFFFFFFFFFFFFFFF
    return np.random.default_rng(mix).standard_normal(dim)


def build_samples(records, mcfg: ModelConfig, gcfg: GeneratorConfig, noise_seed: int) -> SampleSet:
    wph = mcfg.windows_per_hour
    span = records[0].embeddings.shape[0] // wph
    horizon = mcfg.horizon_hours
    xs, labels, ttes, sy, sm, pv, pats, leads, clus = [], [], [], [], [], [], [], [], []
    labs: dict[str, list] = {lab: [] for lab in LAB_NAMES}
    for r in records:
        for k in range(1, span + 1):
            stop = (span + 1 - k) * wph
            xs.append(r.embeddings[stop - wph : stop])
            labels.append(1.0 if r.is_case else 0.0)
            ttes.append(k / horizon if r.is_case else 0.0)
            t0 = r.event_time - k
            target = make_survival_targets(t0, r.event_time, mcfg.bin_width, mcfg.horizon_bins, is_event=r.is_case)
            sy.append(target.y)
            sm.append(target.m)
            pv.append(r.pvector + gcfg.pvector_noise * _pvec_noise(r.patient_id, k, noise_seed, gcfg.pvector_dim))
            for lab in LAB_NAMES:
                labs[lab].append(r.labs[lab][stop - 1])
            pats.append(r.patient_id)
            leads.append(k)
            clus.append(r.cluster)
    return SampleSet(
        x=np.asarray(xs),
        label=np.asarray(labels),
        tte_norm=np.asarray(ttes),
        surv_y=np.asarray(sy, dtype=np.float64),
        surv_m=np.asarray(sm, dtype=np.float64),
        pvec=np.asarray(pv),
        labs={lab: np.asarray(v) for lab, v in labs.items()},
        patient=np.asarray(pats),
        lead=np.asarray(leads),
        cluster=np.asarray(clus),
    )


# -- optimizer -----------------------------------------------------------------


class GroupedOptimizer:
    """Momentum SGD or Adam with decoupled weight decay, two lr/wd groups."""

    def __init__(self, cfg: ExperimentConfig, params: dict) -> None:
        self.kind = cfg.optimizer
        self.momentum = cfg.momentum
        self.groups = {
            "shared": (cfg.lr_aggregator, cfg.wd_aggregator),
            "heads": (cfg.lr_heads, cfg.wd_heads),
        }
        self.state: dict[str, dict] = {k: {} for k in params}
        self.t = 0

    @staticmethod
    def group_of(name: str) -> str:
        return "shared" if name.startswith(("agg.", "proj.")) else "heads"

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            lr, wd = self.groups[self.group_of(name)]
            if lr == 0.0:
                continue
            if wd:
                p *= 1.0 - lr * wd
            st = self.state[name]
            if self.kind == "momentum":
                buf = st.get("m")
                buf = g.copy() if buf is None else self.momentum * buf + g
                st["m"] = buf
                p -= lr * buf
            else:  # adam
                b1, b2, eps = 0.9, 0.999, 1e-8
                m = st.get("m", np.zeros_like(p))
                v = st.get("v", np.zeros_like(p))
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                st["m"], st["v"] = m, v
                mhat = m / (1 - b1**self.t)
                vhat = v / (1 - b2**self.t)
                p -= lr * mhat / (np.sqrt(vhat) + eps)


# -- training -------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict
    loss_rows: list
    loss_columns: list
    conflict_records: list


def _loss_parts(tape: Tape, cfg: ExperimentConfig, heads, bound: dict, batch: SampleSet, idx: np.ndarray) -> dict:
    parts: dict = {}
    needed = L.preset_parts(cfg.preset)
    parts["cls"] = L.bce_logits(tape, heads.cls_logit, batch.label[idx][:, None])
    if "reg" in needed:
        parts["reg"] = L.tte_masked(
            tape, heads.tte, batch.tte_norm[idx][:, None], batch.label[idx][:, None],
            kind=cfg.tte_kind, huber_delta=cfg.weights.huber_delta,
        )
    if "surv" in needed:
        parts["surv"] = L.surv_masked_bce(
            tape, heads.hazard_logits, batch.surv_y[idx], batch.surv_m[idx],
            normalizer=cfg.surv_normalizer,
        )
    if "smooth" in needed:
        parts["smooth"] = L.smoothness_penalty(tape, bound["head.hazard.W"])
    if "group" in needed:
        parts["group"] = L.group_lasso(tape, bound["head.hazard.W"], cfg.weights.group_eps)
    if "pvec" in needed:
        parts["pvec"] = L.adversary_mse(tape, heads.pvec, batch.pvec[idx])
    for lab in LAB_NAMES:
        key = f"lab_{lab}"
        if key in needed:
            parts[key] = L.pseudo_lab_mse(tape, heads.labs[lab], batch.labs[lab][idx][:, None])
    return parts


def train(cfg: ExperimentConfig, train_records, seed: int, initial_params: dict | None = None) -> TrainResult:
    """Minibatch training of one preset; deterministic given the seed.

    `initial_params` warm-starts from an existing parameter map instead of
    the seeded initialization.
    """
    master = np.random.default_rng(seed)
    init_seed = int(master.integers(2**31))
    noise_seed = int(master.integers(2**31))
    shuffle_rng = np.random.default_rng(int(master.integers(2**31)))

    if initial_params is None:
        params = init_params(cfg.model, init_seed)
    else:
        params = {k: np.array(v, dtype=np.float64) for k, v in initial_params.items()}
    tasks = active_tasks(cfg.preset)
    if cfg.weighting == "uncertainty":
        for t in tasks:
            params[f"uw.{t}"] = np.zeros(())
    optimizer = GroupedOptimizer(cfg, params)
    data = build_samples(train_records, cfg.model, cfg.generator, noise_seed)
    shared_names = shared_param_names(params)
    part_names = list(L.preset_parts(cfg.preset))
    per_task = cfg.surgery == "pcgrad" or (cfg.telemetry and len(tasks) >= 2)

    loss_rows: list = []
    conflicts: list[ConflictRecord] = []
    step = 0
    n = len(data)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tape = Tape()
            bound = bind_params(tape, params)
            z = forward_context(tape, bound, cfg.model, data.x[idx])
            heads = forward_heads(tape, bound, cfg.model, z)
            parts = _loss_parts(tape, cfg, heads, bound, data, idx)
            for name, h in parts.items():
                if not np.isfinite(h.value).all():
                    raise RuntimeError(f"non-finite loss {name!r} at step {step}")

            # weighted per-task roots; their sum (plus log-var offsets under
            # uncertainty weighting) is the composite objective
            task_roots = {}
            for t in tasks:
                total_t = None
                for part in TASK_PARTS[t]:
                    if part in parts:
                        term = tape.scale(parts[part], L.part_weight(part, cfg.weights))
                        total_t = term if total_t is None else tape.add(total_t, term)
                if total_t is not None:
                    task_roots[t] = total_t
            log_vars = {}
            if cfg.weighting == "uncertainty":
                log_vars = {t: bound[f"uw.{t}"] for t in task_roots}
                task_roots = {
                    t: tape.mul(tape.exp(tape.scale(log_vars[t], -1.0)), root)
                    for t, root in task_roots.items()
                }

            leaf_to_name = {bound[k].node_id: k for k in bound}
            grads: dict[str, np.ndarray] = {}
            if per_task and len(task_roots) >= 2:
                task_grads: dict[str, dict] = {}
                for t, root in task_roots.items():
                    raw = tape.backward(root)
                    task_grads[t] = {leaf_to_name[i]: g for i, g in raw.items() if i in leaf_to_name}
                flat = [
                    TaskGradient(t, np.concatenate([task_grads[t][k].ravel() for k in shared_names]))
                    for t in tasks
                    if t in task_grads
                ]
                if cfg.telemetry:
                    conflicts.append(make_conflict_record(step, flat))
                for t, tg in task_grads.items():
                    for k, g in tg.items():
                        grads[k] = grads.get(k, 0.0) + g
                if cfg.surgery == "pcgrad" and len(flat) >= 2:
                    shuffle_seed = seed * 1000003 + step if cfg.surgery_order == "seeded_shuffle" else None
                    # rescale the projected mean by the task count so that
                    # conflict-free steps match the surgery-off update exactly
                    combined = pcgrad_step(flat, order=cfg.surgery_order, seed=shuffle_seed) * len(flat)
                    offset = 0
                    for k in shared_names:
                        size = params[k].size
                        grads[k] = combined[offset : offset + size].reshape(params[k].shape)
                        offset += size
            else:
                total = None
                for root in task_roots.values():
                    total = root if total is None else tape.add(total, root)
                raw = tape.backward(total)
                grads = {leaf_to_name[i]: g for i, g in raw.items() if i in leaf_to_name}
            if cfg.weighting == "uncertainty":
                for t in task_roots:
                    grads[f"uw.{t}"] = grads.get(f"uw.{t}", 0.0) + 1.0  # d(s_t)/d(s_t)

            optimizer.step(params, grads)
            total_value = sum(float(r.value) for r in task_roots.values())
            if cfg.weighting == "uncertainty":
                total_value += sum(float(params[f"uw.{t}"]) for t in task_roots)
            loss_rows.append(
                [step, epoch] + [float(parts[p].value) for p in part_names] + [total_value]
            )
            step += 1
    return TrainResult(
        params=params,
        loss_rows=loss_rows,
        loss_columns=["step", "epoch"] + part_names + ["total"],
        conflict_records=conflicts,
    )


# -- evaluation ------------------------------------------------------------------


def _forward_scores(params: dict, mcfg: ModelConfig, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Classifier probability and normalized TTE for a batch of 1-hour windows."""
    tape = Tape()
    bound = bind_params(tape, params)
    z = forward_context(tape, bound, mcfg, windows)
    heads = forward_heads(tape, bound, mcfg, z)
    return expit(heads.cls_logit.value[:, 0]), heads.tte.value[:, 0]


def evaluate_by_leadtime(params: dict, mcfg: ModelConfig, test_records, leads=None) -> LeadTimeReport:
    """Per-lead AUROC/AUPRC/TTE-MAE; rows missing a class are flagged absent."""
    wph = mcfg.windows_per_hour
    span = test_records[0].embeddings.shape[0] // wph
    leads = list(leads) if leads is not None else list(range(1, span + 1))
    is_case = np.array([r.is_case for r in test_records])
    report = LeadTimeReport()
    for k in leads:
        windows = np.stack([lead_window(r, k, wph) for r in test_records])
        prob, tte_norm = _forward_scores(params, mcfg, windows)
        n_pos, n_neg = int(is_case.sum()), int((~is_case).sum())
        if n_pos == 0 or n_neg == 0:
            report.rows.append(LeadTimeRow(k, None, None, None, n_pos, n_neg))
            continue
        mae = tte_mae(tte_norm[is_case] * mcfg.horizon_hours, np.full(n_pos, float(k)), np.ones(n_pos, bool))
        report.rows.append(
            LeadTimeRow(
                lead_hours=k,
                auroc=auroc(prob[is_case], prob[~is_case]),
                auprc=auprc(prob[is_case], prob[~is_case]),
                tte_mae=mae,
                n_pos=n_pos,
                n_neg=n_neg,
            )
        )
    return report


# -- identity probing ---------------------------------------------------------------


def extract_contexts(params: dict, mcfg: ModelConfig, records, leads=None) -> tuple[np.ndarray, np.ndarray]:
    """Context vectors z for every (patient, lead) pair plus cluster labels."""
    wph = mcfg.windows_per_hour
    span = records[0].embeddings.shape[0] // wph
    leads = list(leads) if leads is not None else list(range(1, span + 1))
    zs, clusters = [], []
    for k in leads:
        windows = np.stack([lead_window(r, k, wph) for r in records])
        tape = Tape()
        bound = bind_params(tape, params)
        z = forward_context(tape, bound, mcfg, windows)
        zs.append(z.value)
        clusters.extend(r.cluster for r in records)
    return np.concatenate(zs, axis=0), np.asarray(clusters)


def fit_linear_probe(z: np.ndarray, labels: np.ndarray, n_classes: int,
                     l2: float = 1e-3, max_iter: int = 200) -> np.ndarray:
    """Multinomial-logistic probe weights (n_classes, D+1) via L-BFGS."""
    from scipy.optimize import minimize

    n, d = z.shape
    x = np.concatenate([z, np.ones((n, 1))], axis=1)
    onehot = np.eye(n_classes)[labels]

    def objective(wflat):
        w = wflat.reshape(n_classes, d + 1)
        logits = x @ w.T
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        loss = -np.log(np.clip(p[np.arange(n), labels], 1e-12, None)).mean() + 0.5 * l2 * (w * w).sum()
        grad = (p - onehot).T @ x / n + l2 * w
        return loss, grad.ravel()

    res = minimize(objective, np.zeros(n_classes * (d + 1)), jac=True,
                   method="L-BFGS-B", options={"maxiter": max_iter})
    return res.x.reshape(n_classes, d + 1)


def probe_accuracy(weights: np.ndarray, z: np.ndarray, labels: np.ndarray) -> float:
    x = np.concatenate([z, np.ones((z.shape[0], 1))], axis=1)
    pred = (x @ weights.T).argmax(axis=1)
    return float((pred == labels).mean())


def identity_probe_accuracy(params: dict, mcfg: ModelConfig, train_records, test_records,
                            n_clusters: int) -> float:
    """Fit a cluster probe on train-split contexts, score on the test split."""
    z_tr, c_tr = extract_contexts(params, mcfg, train_records)
    z_te, c_te = extract_contexts(params, mcfg, test_records)
    w = fit_linear_probe(z_tr, c_tr, n_clusters)
    return probe_accuracy(w, z_te, c_te)


# -- end-to-end preset runs --------------------------------------------------------


def _write_loss_csv(result: TrainResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(result.loss_columns)
        for row in result.loss_rows:
            writer.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])


def run_preset(cfg: ExperimentConfig, out_dir, cohort=None) -> dict:
    """generate (or reuse) -> split -> train -> evaluate, with artifacts on disk.

    Returns {seed: {artifact: path}}. The split seed is the generator seed so
    the designed train-side identity confound lands in the training split.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cohort is None:
        cohort = generate_cohort(cfg.generator)
    train_recs, test_recs = split_stratified(cohort, cfg.split_ratio, cfg.generator.seed)

    results: dict = {}
    for seed in cfg.seeds:
        seed_dir = out_dir if len(cfg.seeds) == 1 else out_dir / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        result = train(cfg, train_recs, seed)
        report = evaluate_by_leadtime(result.params, cfg.model, test_recs)

        paths = {
            "metrics": seed_dir / "metrics.csv",
            "conflict": seed_dir / "conflict.csv",
            "loss": seed_dir / "loss.csv",
            "checkpoint": seed_dir / "checkpoint.npz",
            "config": seed_dir / "config.json",
        }
        write_report_csv(report, paths["metrics"])
        write_conflict_csv(result.conflict_records, paths["conflict"])
        _write_loss_csv(result, paths["loss"])
        save_params(paths["checkpoint"], result.params, cfg.model)
        snapshot = config_to_dict(cfg)
        snapshot["resolved_seed"] = seed
        with open(paths["config"], "w") as fh:
            json.dump(snapshot, fh, sort_keys=True, indent=2)
            fh.write("\n")
        results[seed] = paths
    return results
