import copy
import json

import numpy as np
import pytest

from mtte import losses as L
from mtte.autodiff import Tape
from mtte.datagen import GeneratorConfig, generate_cohort, split_stratified
from mtte.harness import (
    ExperimentConfig,
    TASK_PARTS,
    active_tasks,
    build_samples,
    config_from_dict,
    config_to_dict,
    desk_config,
    evaluate_by_leadtime,
    extract_contexts,
    run_preset,
    train,
)
from mtte.metrics import read_report_csv
from mtte.model import ModelConfig, bind_params, forward_context, forward_heads, init_params, shared_param_names
from mtte.surgery import read_conflict_csv

GEN = GeneratorConfig(n_cases=8, n_controls=24, seed=2)


@pytest.fixture(scope="module")
def tiny_cohort():
    return generate_cohort(GEN)


@pytest.fixture(scope="module")
def tiny_split(tiny_cohort):
    return split_stratified(tiny_cohort, 0.8, GEN.seed)


def _cfg(preset, **overrides):
    overrides.setdefault("generator", GEN)
    overrides.setdefault("epochs", 1)
    return desk_config(preset, 2, **overrides)


# -- config handling -----------------------------------------------------------


def test_config_round_trip_and_defaults():
    cfg = desk_config("pvector", 3)
    doc = config_to_dict(cfg)
    again = config_from_dict(doc)
    assert again == cfg
    assert config_from_dict({}) == ExperimentConfig()


def test_config_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown config fields"):
        config_from_dict({"nonsense": 1})
    with pytest.raises(ValueError, match="unknown model config fields"):
        config_from_dict({"model": {"bogus": 2}})


def test_config_validation_errors():
    with pytest.raises(ValueError):
        ExperimentConfig(preset="nope")
    with pytest.raises(ValueError):
        ExperimentConfig(epochs=0)
    with pytest.raises(ValueError):
        ExperimentConfig(batch_size=1)
    with pytest.raises(ValueError):
        ExperimentConfig(model=ModelConfig(embed_dim=8))  # generator mismatch


def test_active_tasks_per_preset():
    assert active_tasks("baseline") == ("CA",)
    assert active_tasks("tte_reg") == ("CA", "TTE")
    assert active_tasks("tte_survival") == ("CA", "TTE")
    assert active_tasks("pvector") == ("CA", "ID")
    assert active_tasks("pseudo_trop") == ("CA", "LAB")
    assert active_tasks("all") == ("CA", "TTE", "LAB", "ID")


# -- sample construction ----------------------------------------------------------


def test_build_samples_targets(tiny_cohort):
    cfg = _cfg("baseline")
    case = next(r for r in tiny_cohort if r.is_case)
    control = next(r for r in tiny_cohort if not r.is_case)
    data = build_samples([case, control], cfg.model, cfg.generator, noise_seed=0)
    assert len(data) == 2 * 24
    for i in range(24):
        k = data.lead[i]
        assert data.label[i] == 1.0
        assert data.tte_norm[i] == pytest.approx(k / 24.0)
        assert data.surv_y[i, k - 1] == 1.0
        np.testing.assert_array_equal(data.surv_m[i, :k], 1.0)
        np.testing.assert_array_equal(data.surv_m[i, k:], 0.0)
    for i in range(24, 48):
        k = data.lead[i]
        assert data.label[i] == 0.0
        assert data.surv_y[i].sum() == 0.0
        assert data.surv_m[i].sum() == k


def test_build_samples_pvec_noise_deterministic(tiny_cohort):
    cfg = _cfg("baseline")
    a = build_samples(tiny_cohort[:2], cfg.model, cfg.generator, noise_seed=5)
    b = build_samples(tiny_cohort[:2], cfg.model, cfg.generator, noise_seed=5)
    c = build_samples(tiny_cohort[:2], cfg.model, cfg.generator, noise_seed=6)
    np.testing.assert_array_equal(a.pvec, b.pvec)
    assert not np.array_equal(a.pvec, c.pvec)


# -- gradient bookkeeping -----------------------------------------------------------


def _batch_task_and_total_grads(cfg, records):
    """Per-task backward grads and a fresh composite backward on one batch."""
    data = build_samples(records, cfg.model, cfg.generator, noise_seed=0)
    idx = np.arange(min(16, len(data)))
    params = init_params(cfg.model, 0)
    from mtte.harness import _loss_parts

    tape = Tape()
    bound = bind_params(tape, params)
    z = forward_context(tape, bound, cfg.model, data.x[idx])
    heads = forward_heads(tape, bound, cfg.model, z)
    parts = _loss_parts(tape, cfg, heads, bound, data, idx)
    weights = cfg.weights
    task_roots = {}
    for t in active_tasks(cfg.preset):
        terms = [
            tape.scale(parts[p], L.part_weight(p, weights))
            for p in TASK_PARTS[t]
            if p in parts
        ]
        root = terms[0]
        for term in terms[1:]:
            root = tape.add(root, term)
        task_roots[t] = root
    total = None
    for root in task_roots.values():
        total = root if total is None else tape.add(total, root)
    names = shared_param_names(params)
    leaf_of = {k: bound[k].node_id for k in names}

    def flat(grads):
        return np.concatenate([grads[leaf_of[k]].ravel() for k in names])

    per_task = [flat(tape.backward(root)) for root in task_roots.values()]
    composite = flat(tape.backward(total))
    return per_task, composite


def test_per_task_gradients_sum_to_composite(tiny_cohort):
    cfg = _cfg("all")
    per_task, composite = _batch_task_and_total_grads(cfg, tiny_cohort)
    np.testing.assert_allclose(np.sum(per_task, axis=0), composite, atol=1e-10)


def test_grl_alpha_zero_matches_detached_adversary(tiny_cohort):
    # shared gradients with alpha=0 equal the baseline's (adversary head detached)
    base_cfg = _cfg("baseline")
    adv_cfg = _cfg("pvector", model=ModelConfig(grl_alpha=0.0))
    per_task_b, composite_b = _batch_task_and_total_grads(base_cfg, tiny_cohort)
    per_task_a, composite_a = _batch_task_and_total_grads(adv_cfg, tiny_cohort)
    np.testing.assert_allclose(composite_a, composite_b, atol=1e-15)


# -- training behavior ------------------------------------------------------------------


def test_train_deterministic_given_seed(tiny_split):
    tr, _ = tiny_split
    cfg = _cfg("tte_reg")
    a = train(cfg, tr, seed=4)
    b = train(cfg, tr, seed=4)
    for key in a.params:
        np.testing.assert_array_equal(a.params[key], b.params[key])
    assert a.loss_rows == b.loss_rows


def test_zero_lr_freezes_exactly_that_group(tiny_split):
    tr, _ = tiny_split
    cfg = _cfg("tte_reg", lr_heads=0.0)
    res = train(cfg, tr, seed=1)
    master = np.random.default_rng(1)
    init_seed = int(master.integers(2**31))
    init = init_params(cfg.model, init_seed)
    for key in init:
        if key.startswith("head."):
            np.testing.assert_array_equal(res.params[key], init[key])
        else:
            assert not np.array_equal(res.params[key], init[key]), key
    cfg2 = _cfg("tte_reg", lr_aggregator=0.0)
    res2 = train(cfg2, tr, seed=1)
    for key in init:
        if key.startswith(("agg.", "proj.")):
            np.testing.assert_array_equal(res2.params[key], init[key])


def test_telemetry_logged_every_step_for_multitask(tiny_split):
    tr, _ = tiny_split
    cfg = _cfg("pvector")
    res = train(cfg, tr, seed=0)
    assert len(res.conflict_records) == len(res.loss_rows)
    assert [r.step for r in res.conflict_records] == [row[0] for row in res.loss_rows]
    assert all(r.tasks == ("CA", "ID") for r in res.conflict_records)


def test_single_task_preset_logs_no_telemetry(tiny_split):
    tr, _ = tiny_split
    res = train(_cfg("baseline"), tr, seed=0)
    assert res.conflict_records == []


def test_pcgrad_identical_to_off_when_no_conflicts(tiny_split):
    # seed 7 happens to produce a conflict-free epoch on this cohort
    tr, _ = tiny_split
    on = train(_cfg("tte_reg", surgery="pcgrad"), tr, seed=7)
    off = train(_cfg("tte_reg", surgery="none"), tr, seed=7)
    assert all(r.conflict_rate == 0.0 for r in on.conflict_records)
    assert on.loss_rows == off.loss_rows
    for key in on.params:
        np.testing.assert_array_equal(on.params[key], off.params[key])


def test_pcgrad_equals_surgery_off_until_first_conflict(tiny_split):
    tr, _ = tiny_split
    on = train(_cfg("tte_reg", surgery="pcgrad"), tr, seed=6)
    off = train(_cfg("tte_reg", surgery="none"), tr, seed=6)
    first_conflict = next(
        (r.step for r in on.conflict_records if r.conflict_rate > 0), None
    )
    assert first_conflict is not None and first_conflict >= 1
    for row_on, row_off in zip(on.loss_rows, off.loss_rows):
        if row_on[0] > first_conflict:
            break
        assert row_on == row_off


def test_non_finite_loss_aborts_with_context(tiny_cohort):
    # warm-start from overflowing head weights: the first classifier logit
    # hits inf and the abort names the loss and step
    cfg = _cfg("baseline")
    blown = init_params(cfg.model, 0)
    blown["head.cls.W"] = np.full_like(blown["head.cls.W"], 1e308)
    with pytest.raises(RuntimeError, match="non-finite loss 'cls' at step 0"):
        train(cfg, tiny_cohort, seed=0, initial_params=blown)


def test_uncertainty_weighting_trains_log_vars(tiny_split):
    tr, _ = tiny_split
    res = train(_cfg("pvector", weighting="uncertainty", epochs=2), tr, seed=0)
    assert "uw.CA" in res.params and "uw.ID" in res.params
    assert float(res.params["uw.ID"]) != 0.0


# -- evaluation ----------------------------------------------------------------------


def test_evaluate_report_has_24_rows(tiny_split):
    tr, te = tiny_split
    res = train(_cfg("baseline"), tr, seed=0)
    rep = evaluate_by_leadtime(res.params, _cfg("baseline").model, te)
    assert len(rep.rows) == 24
    assert all(r.present for r in rep.rows)
    assert all(0.0 <= r.auroc <= 1.0 for r in rep.rows)


def test_evaluate_missing_class_flags_row_absent(tiny_cohort):
    controls = [r for r in tiny_cohort if not r.is_case][:5]
    params = init_params(ModelConfig(), 0)
    rep = evaluate_by_leadtime(params, ModelConfig(), controls)
    assert all(not r.present for r in rep.rows)
    with pytest.raises(ValueError):
        rep.time_averaged_auroc


def test_untrained_params_near_chance(default_cohort):
    # null-model sanity band: random context + random heads ranks near 0.5
    aurocs = []
    for seed in range(5):
        params = init_params(ModelConfig(), seed)
        rep = evaluate_by_leadtime(params, ModelConfig(), default_cohort[::4])
        aurocs.append(rep.time_averaged_auroc)
    assert 0.4 <= float(np.mean(aurocs)) <= 0.6


def test_oracle_latent_scorer_ceiling(default_cohort):
    # scoring by the latent deterioration channel must separate well
    from mtte.metrics import LeadTimeReport, LeadTimeRow, auprc, auroc

    test = default_cohort[::3]
    wph = GeneratorConfig().windows_per_hour
    rows = []
    for k in range(1, 25):
        stop = (25 - k) * wph
        scores = np.array([r.latent[stop - wph : stop, 0].mean() for r in test])
        is_case = np.array([r.is_case for r in test])
        rows.append(
            LeadTimeRow(k, auroc(scores[is_case], scores[~is_case]),
                        auprc(scores[is_case], scores[~is_case]), None,
                        int(is_case.sum()), int((~is_case).sum()))
        )
    report = LeadTimeReport(rows=rows)
    assert report.time_averaged_auroc > 0.9


def test_extract_contexts_shape(tiny_split):
    tr, te = tiny_split
    params = init_params(ModelConfig(), 0)
    z, clusters = extract_contexts(params, ModelConfig(), te, leads=(1, 12))
    assert z.shape == (2 * len(te), ModelConfig().hidden_dim)
    assert set(clusters) <= set(range(GEN.identity_clusters))


# -- artifacts ----------------------------------------------------------------------


def test_run_preset_artifacts_and_determinism(tmp_path, tiny_cohort):
    cfg = _cfg("all")
    out1 = run_preset(cfg, tmp_path / "r1", cohort=tiny_cohort)
    out2 = run_preset(cfg, tmp_path / "r2", cohort=tiny_cohort)
    paths = out1[2]
    for name in ("metrics", "conflict", "loss", "checkpoint", "config"):
        assert paths[name].exists(), name
    assert (tmp_path / "r1" / "metrics.csv").read_bytes() == (tmp_path / "r2" / "metrics.csv").read_bytes()
    assert (tmp_path / "r1" / "conflict.csv").read_bytes() == (tmp_path / "r2" / "conflict.csv").read_bytes()
    report = read_report_csv(paths["metrics"])
    assert len(report.rows) == 24
    rows = read_conflict_csv(paths["conflict"])
    assert rows and all(0.0 <= r["r_t"] <= 1.0 for r in rows)
    snapshot = json.loads(paths["config"].read_text())
    assert snapshot["resolved_seed"] == 2
    assert snapshot["preset"] == "all"


def test_run_preset_creates_missing_directories(tmp_path, tiny_cohort):
    cfg = _cfg("baseline")
    target = tmp_path / "deep" / "nested" / "dir"
    run_preset(cfg, target, cohort=tiny_cohort)
    assert (target / "metrics.csv").exists()


def test_preset_sweep_emits_nine_reports(tmp_path, tiny_cohort):
    for preset in L.PRESETS:
        cfg = _cfg(preset)
        run_preset(cfg, tmp_path / preset, cohort=tiny_cohort)
    reports = list(tmp_path.glob("*/metrics.csv"))
    assert len(reports) == 9
