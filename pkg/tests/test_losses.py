import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtte.autodiff import Tape, grad_check
from mtte.losses import (
    LossWeights,
    MissingLossPartError,
    SurvivalTarget,
    adversary_mse,
    bce_logits,
    compose_total,
    group_lasso,
    preset_parts,
    pseudo_lab_mse,
    smoothness_penalty,
    surv_masked_bce,
    tte_masked,
)

LN2 = math.log(2.0)


def _scalar(handle):
    return float(handle.value)


# -- bce_logits ---------------------------------------------------------------


def test_bce_at_zero_logit():
    t = Tape()
    s = t.leaf([0.0])
    assert _scalar(bce_logits(t, s, [1.0])) == pytest.approx(LN2)
    assert _scalar(bce_logits(t, s, [0.0])) == pytest.approx(LN2)


def test_bce_log3_example():
    # -ln sigma(ln 3) = ln(4/3), by direct evaluation
    t = Tape()
    s = t.leaf([math.log(3.0)])
    assert _scalar(bce_logits(t, s, [1.0])) == pytest.approx(math.log(4.0 / 3.0))


def test_bce_rejects_empty_batch():
    t = Tape()
    with pytest.raises(ValueError):
        bce_logits(t, t.leaf(np.zeros((0,))), np.zeros(0))


def test_bce_is_overflow_safe():
    t = Tape()
    s = t.leaf([1000.0, -1000.0])
    val = _scalar(bce_logits(t, s, [1.0, 0.0]))
    assert np.isfinite(val) and val == pytest.approx(0.0)


@given(
    st.lists(st.floats(-30, 30, allow_nan=False), min_size=1, max_size=8),
    st.lists(st.integers(0, 1), min_size=8, max_size=8),
)
@settings(max_examples=40, deadline=None)
def test_bce_label_flip_symmetry(logits, labels):
    labels = labels[: len(logits)]
    t = Tape()
    a = bce_logits(t, t.leaf(logits), np.asarray(labels, float))
    b = bce_logits(t, t.leaf([-s for s in logits]), 1.0 - np.asarray(labels, float))
    assert _scalar(a) == pytest.approx(_scalar(b), abs=1e-12)


# -- tte_masked ---------------------------------------------------------------


def test_tte_l1_examples():
    t = Tape()
    loss = tte_masked(t, t.leaf([2.0, 5.0]), [3.0, 5.0], [1.0, 1.0], kind="l1")
    assert _scalar(loss) == pytest.approx(0.5)
    loss = tte_masked(t, t.leaf([2.0, 9.0]), [3.0, 5.0], [1.0, 0.0], kind="l1")
    assert _scalar(loss) == pytest.approx(1.0)


def test_tte_empty_positive_batch_contributes_zero_without_gradient():
    t = Tape()
    pred = t.leaf([2.0, 9.0])
    loss = tte_masked(t, pred, [3.0, 5.0], [0.0, 0.0])
    assert _scalar(loss) == 0.0
    grads = t.backward(loss)
    np.testing.assert_array_equal(grads[pred.node_id], [0.0, 0.0])


def test_tte_mse_and_huber_kinds():
    t = Tape()
    mse = tte_masked(t, t.leaf([2.0, 5.0]), [3.0, 5.0], [1.0, 1.0], kind="mse")
    assert _scalar(mse) == pytest.approx(0.5)
    # residuals -1 (|r| <= delta -> quadratic) and 3 (linear branch)
    hub = tte_masked(t, t.leaf([2.0, 8.0]), [3.0, 5.0], [1.0, 1.0], kind="huber", huber_delta=1.0)
    assert _scalar(hub) == pytest.approx(0.5 * (0.5 + (3.0 - 0.5)))


# -- surv_masked_bce -----------------------------------------------------------


def test_surv_single_bin():
    t = Tape()
    loss = surv_masked_bce(t, t.leaf([[0.0]]), [[1.0]], [[1.0]])
    assert _scalar(loss) == pytest.approx(LN2)


def test_surv_two_bins_mean():
    t = Tape()
    loss = surv_masked_bce(t, t.leaf([[0.0, 0.0]]), [[0.0, 1.0]], [[1.0, 1.0]])
    assert _scalar(loss) == pytest.approx(LN2)


def test_surv_masked_bin_ignored_regardless_of_eta():
    t = Tape()
    loss = surv_masked_bce(t, t.leaf([[0.0, 100.0]]), [[0.0, 0.0]], [[1.0, 0.0]])
    assert _scalar(loss) == pytest.approx(LN2)


def test_surv_all_masked_is_error():
    t = Tape()
    with pytest.raises(ValueError):
        surv_masked_bce(t, t.leaf([[1.0, 2.0]]), [[0.0, 0.0]], [[0.0, 0.0]])


def test_surv_per_sample_normalizer():
    # sample A: two observed ln2 bins; sample B: one observed bin at eta=0
    t = Tape()
    eta = t.leaf([[0.0, 0.0], [0.0, 50.0]])
    y = [[0.0, 1.0], [1.0, 0.0]]
    m = [[1.0, 1.0], [1.0, 0.0]]
    batch = surv_masked_bce(t, eta, y, m, normalizer="batch")
    per = surv_masked_bce(t, eta, y, m, normalizer="per_sample")
    assert _scalar(batch) == pytest.approx(LN2)
    assert _scalar(per) == pytest.approx(LN2)  # equal here; both samples average ln2
    # weighting differs once bin counts are asymmetric in value
    t2 = Tape()
    eta2 = t2.leaf([[1.0, 1.0], [0.0, -3.0]])
    y2 = [[0.0, 0.0], [0.0, 0.0]]
    m2 = [[1.0, 1.0], [1.0, 0.0]]
    b2 = _scalar(surv_masked_bce(t2, eta2, y2, m2, normalizer="batch"))
    p2 = _scalar(surv_masked_bce(t2, eta2, y2, m2, normalizer="per_sample"))
    sp1 = math.log(1 + math.e)
    expected_batch = (2 * sp1 + LN2) / 3
    expected_per = (sp1 + LN2) / 2
    assert b2 == pytest.approx(expected_batch)
    assert p2 == pytest.approx(expected_per)


def test_survival_target_invariants():
    SurvivalTarget(y=np.array([0, 1, 0]), m=np.array([1, 1, 0]))
    with pytest.raises(ValueError):
        SurvivalTarget(y=np.array([1, 1, 0]), m=np.array([1, 1, 1]))
    with pytest.raises(ValueError):
        SurvivalTarget(y=np.array([0, 1, 0]), m=np.array([1, 0, 0]))
    with pytest.raises(ValueError):
        SurvivalTarget(y=np.array([0, 0, 0]), m=np.array([1, 0, 1]))


# -- regularizers ---------------------------------------------------------------


def test_smoothness_examples():
    t = Tape()
    w = t.leaf(np.zeros((3, 2)))  # equal columns (bin-major rows)
    assert _scalar(smoothness_penalty(t, w)) == 0.0
    w2 = t.leaf(np.array([[0.0], [2.0]]))  # D=1, columns 0 and 2
    assert _scalar(smoothness_penalty(t, w2)) == pytest.approx(4.0)
    w3 = t.leaf(np.array([[1.0, 0.0], [0.0, 1.0]]))  # D=2 columns (1,0),(0,1)
    assert _scalar(smoothness_penalty(t, w3)) == pytest.approx(2.0)


def test_smoothness_single_bin_is_zero():
    t = Tape()
    assert _scalar(smoothness_penalty(t, t.leaf(np.ones((1, 4))))) == 0.0


def test_group_lasso_examples():
    t = Tape()
    w = t.leaf(np.zeros((5, 3)))  # D=3 features
    assert _scalar(group_lasso(t, w, 1e-8)) == pytest.approx(3e-4)
    w2 = t.leaf(np.array([[3.0]]))
    assert _scalar(group_lasso(t, w2, 1e-8)) == pytest.approx(math.sqrt(9.0 + 1e-8))


def test_group_lasso_positive_homogeneity():
    rng = np.random.default_rng(0)
    w_val = rng.normal(size=(4, 3))
    eps = 1e-14  # near-zero to expose the homogeneous limit
    t = Tape()
    base = _scalar(group_lasso(t, t.leaf(w_val), eps))
    scaled = _scalar(group_lasso(t, t.leaf(2.5 * w_val), eps))
    assert scaled == pytest.approx(2.5 * base, rel=1e-9)


def test_smoothness_detects_column_permutation():
    rng = np.random.default_rng(1)
    w_val = rng.normal(size=(4, 3))  # 4 bins, unequal
    perm = w_val[[2, 0, 3, 1]]
    t = Tape()
    a = _scalar(smoothness_penalty(t, t.leaf(w_val)))
    b = _scalar(smoothness_penalty(t, t.leaf(perm)))
    assert abs(a - b) > 1e-9


# -- adversary / labs -------------------------------------------------------------


def test_adversary_mse_examples():
    t = Tape()
    p = np.array([[1.0, 0.0]])
    assert _scalar(adversary_mse(t, t.leaf(p), p)) == 0.0
    assert _scalar(adversary_mse(t, t.leaf([[1.0, 0.0]]), [[0.0, 0.0]])) == pytest.approx(1.0)
    pred = t.leaf([[1.0, 0.0], [1.0, np.sqrt(2.0)]])
    assert _scalar(adversary_mse(t, pred, np.zeros((2, 2)))) == pytest.approx(2.0)


def test_pseudo_lab_mse_examples():
    t = Tape()
    assert _scalar(pseudo_lab_mse(t, t.leaf([[2.0]]), [[0.0]])) == pytest.approx(4.0)
    assert _scalar(pseudo_lab_mse(t, t.leaf([[1.5]]), [[1.5]])) == 0.0


def test_teacher_values_receive_no_gradient():
    # the teacher side enters as plain data; only the student leaf gets grads
    t = Tape()
    pred = t.leaf([[2.0]])
    loss = pseudo_lab_mse(t, pred, [[1.0]])
    grads = t.backward(loss)
    assert set(grads) >= {pred.node_id}
    np.testing.assert_allclose(grads[pred.node_id], [[2.0]])


# -- compose_total ------------------------------------------------------------------


def test_compose_tte_reg_weighted_sum():
    t = Tape()
    parts = {"cls": t.leaf(0.7), "reg": t.leaf(0.5)}
    total = compose_total(t, parts, LossWeights(), "tte_reg")
    assert _scalar(total) == pytest.approx(1.2)


def test_compose_pvector_uses_paper_weight():
    t = Tape()
    parts = {"cls": t.leaf(0.7), "pvec": t.leaf(2.0)}
    total = compose_total(t, parts, LossWeights(), "pvector")
    assert _scalar(total) == pytest.approx(0.7 + 0.2)


def test_compose_degenerate_weights_reduce_to_cls():
    t = Tape()
    parts = {
        "cls": t.leaf(0.9),
        "reg": t.leaf(5.0),
        "pvec": t.leaf(5.0),
        "lab_lac": t.leaf(5.0),
        "lab_na": t.leaf(5.0),
        "lab_trop": t.leaf(5.0),
        "lab_k": t.leaf(5.0),
    }
    weights = LossWeights(lam_reg=0.0, lam_adv=0.0, lam_lab=0.0)
    assert _scalar(compose_total(t, parts, weights, "all")) == pytest.approx(0.9)


def test_compose_missing_part_names_it():
    t = Tape()
    with pytest.raises(MissingLossPartError) as exc:
        compose_total(t, {"cls": t.leaf(0.5)}, LossWeights(), "pvector")
    assert "pvec" in str(exc.value)


def test_compose_linear_in_each_part():
    weights = LossWeights()
    rng = np.random.default_rng(2)
    for part in ("cls", "reg"):
        vals = rng.uniform(0.1, 2.0, size=2)
        totals = []
        for v in vals:
            t = Tape()
            parts = {"cls": t.leaf(0.0), "reg": t.leaf(0.0)}
            parts[part] = t.leaf(v)
            totals.append(_scalar(compose_total(t, parts, weights, "tte_reg")))
        from mtte.losses import part_weight

        slope = (totals[1] - totals[0]) / (vals[1] - vals[0])
        assert slope == pytest.approx(part_weight(part, weights))


def test_preset_parts_rejects_unknown():
    with pytest.raises(ValueError):
        preset_parts("nope")


# -- gradient checks over all losses ----------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_losses_pass_grad_check(seed):
    rng = np.random.default_rng(seed)
    point = rng.normal(size=4)

    tte_target = rng.normal(size=4) + 5.0

    def bce_build(t, x):
        return bce_logits(t, x, np.array([1.0, 0.0, 1.0, 0.0]))

    def tte_build(t, x):
        return tte_masked(t, x, tte_target, [1.0, 1.0, 0.0, 1.0], kind="mse")

    def surv_build(t, x):
        eta = t.reshape(x, (2, 2))
        return surv_masked_bce(t, eta, [[0.0, 1.0], [0.0, 0.0]], [[1.0, 1.0], [1.0, 0.0]])

    def smooth_build(t, x):
        return smoothness_penalty(t, t.reshape(x, (2, 2)))

    def group_build(t, x):
        return group_lasso(t, t.reshape(x, (2, 2)), 1e-8)

    def adv_build(t, x):
        return adversary_mse(t, t.reshape(x, (2, 2)), np.ones((2, 2)))

    def lab_build(t, x):
        return pseudo_lab_mse(t, t.reshape(x, (4, 1)), np.full((4, 1), 0.3))

    for name, build in [
        ("bce", bce_build),
        ("tte_mse", tte_build),
        ("surv", surv_build),
        ("smooth", smooth_build),
        ("group", group_build),
        ("adv", adv_build),
        ("lab", lab_build),
    ]:
        err = grad_check(build, point, 1e-5)
        assert err < 1e-6, f"{name}: {err}"
    # L1 away from the kink
    shifted = point + np.sign(point) * 2.0

    def l1_build(t, x):
        return tte_masked(t, x, np.zeros(4), np.ones(4), kind="l1")

    assert grad_check(l1_build, shifted, 1e-5) < 1e-6
