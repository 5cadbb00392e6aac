from __future__ import annotations

import math

import numpy as np
import pytest

from src.config import LossToggles
from src.core.geometry import CenterBank, class_centers
from src.core.numerics import cross_entropy, finite_diff_gradient, kl_divergence, softmax
from src.engines.experts import (
    PromptExpert,
    SourceExpert,
    flatten_params,
    prompt_forward_batch,
    source_forward_batch,
    write_params,
)
from src.engines.losses import (
    COMPONENT_CE,
    COMPONENT_MI,
    COMPONENT_PSC,
    COMPONENT_WEISZ,
    COUNT_WEISZ_SKIPPED,
    Batch,
    LossReport,
    adapter_objective,
    assign_categories,
    consensus_ce_loss,
    joint_distribution,
    mutual_information_gradients,
    mutual_information_loss,
    prompt_consistency_loss,
    prompt_objective,
    warmup_adapter_objective,
    warmup_prompt_objective,
    weiszfeld_style_loss,
)

ALL_ON = LossToggles(weisz=True, psc=True, mi=True)


# --- builders ---------------------------------------------------------------------------

def _source_expert(rng: np.random.Generator, d_in: int, d_hidden: int, c: int, r: int) -> SourceExpert:
    return SourceExpert(
        backbone_w1=rng.normal(size=(d_hidden, d_in)) / np.sqrt(d_in),
        backbone_b1=rng.normal(scale=0.2, size=d_hidden),
        head_w2=rng.normal(size=(c, d_hidden)),
        head_b2=rng.normal(scale=0.2, size=c),
        adapter_down=rng.normal(scale=0.5, size=(r, d_hidden)),
        adapter_up=rng.normal(scale=0.3, size=(d_hidden, r)),
    )


def _prompt_expert(rng: np.random.Generator, d_in: int, d_embed: int, c: int, temperature: float = 0.5) -> PromptExpert:
    anchors = rng.normal(size=(c, d_embed))
    return PromptExpert(
        encoder_u=rng.normal(size=(d_embed, d_in)),
        anchors=anchors / np.linalg.norm(anchors, axis=1, keepdims=True),
        prompt=rng.normal(scale=0.3, size=d_embed),
        temperature=temperature,
    )


def _probs(rng: np.random.Generator, n: int, c: int) -> np.ndarray:
    return rng.dirichlet(np.ones(c), size=n)


def _min_abs_pre_relu(e: SourceExpert, *batches: np.ndarray) -> float:
    values = [np.abs(source_forward_batch(e, x).pre_relu).min() for x in batches if len(x)]
    return float(min(values)) if values else np.inf


def _assert_gradients_match(analytic: np.ndarray, numeric: np.ndarray) -> None:
    mask = np.abs(analytic) > 1e-6
    assert mask.any()
    gap = np.abs(analytic - numeric)
    assert np.all(gap[mask] <= 1e-4 * np.abs(analytic[mask]) + 1e-9)
    assert np.all(gap[~mask] <= 1e-6)


def _objective_on_params(expert, objective):
    def f(flat: np.ndarray) -> float:
        trial = expert.copy()
        write_params(trial, flat)
        return objective(trial).total

    return f


# --- consensus cross-entropy ----------------------------------------------------------------

def test_consensus_ce_examples() -> None:
    one_hots = np.eye(3)[[0, 2, 1]]
    assert consensus_ce_loss(one_hots, one_hots) == 0.0
    assert consensus_ce_loss([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(math.log(2.0))
    assert consensus_ce_loss([], []) == 0.0


def test_consensus_ce_is_sum_of_pairs() -> None:
    rng = np.random.default_rng(0)
    ps, pv = _probs(rng, 4, 5), _probs(rng, 4, 5)
    oracle = sum(cross_entropy(ps[n], pv[n]) for n in range(4))
    assert consensus_ce_loss(ps, pv) == pytest.approx(oracle, abs=1e-12)


def test_consensus_ce_rejects_length_mismatch() -> None:
    with pytest.raises(ValueError, match="Length mismatch"):
        consensus_ce_loss([[0.5, 0.5]], [[0.5, 0.5], [1.0, 0.0]])


# --- Weiszfeld style loss ------------------------------------------------------------------------

def test_style_loss_identity_and_orthogonal_cases() -> None:
    centers = CenterBank(centers={0: np.array([1.0, 2.0]), 1: np.array([1.0, 0.0])}, support_counts={0: 1, 1: 1})

    same = weiszfeld_style_loss(centers, [np.array([2.0, 4.0])], [0], ce_term=0.7)
    assert same.cosine_term == pytest.approx(0.0, abs=1e-12)
    assert same.value == pytest.approx(0.7)

    ortho = weiszfeld_style_loss(centers, [np.array([0.0, 3.0])], [1], ce_term=0.0)
    assert ortho.value == pytest.approx(1.0)


def test_style_loss_matches_per_sample_oracle() -> None:
    y0, y1 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 1.0])
    centers = CenterBank(centers={0: y0, 1: y1}, support_counts={0: 2, 1: 3})
    feats = [np.array([1.0, 1.0, 0.0]), np.array([0.0, 2.0, 0.0]), np.array([3.0, 0.0, 4.0])]
    cats = [0, 1, 1]

    def cos(a: np.ndarray, b: np.ndarray) -> float:
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    oracle = np.mean([1 - cos(y0, feats[0]), 1 - cos(y1, feats[1]), 1 - cos(y1, feats[2])]) + 0.25
    result = weiszfeld_style_loss(centers, feats, cats, ce_term=0.25)

    assert result.value == pytest.approx(oracle, abs=1e-12)
    assert result.used == 3
    assert result.skipped == 0


def test_style_loss_skips_categories_without_center() -> None:
    centers = CenterBank(centers={0: np.array([1.0, 0.0])}, support_counts={0: 4})

    partial = weiszfeld_style_loss(centers, [np.array([1.0, 0.0]), np.array([0.0, 1.0])], [0, 2], ce_term=0.0)
    assert partial.used == 1
    assert partial.skipped == 1
    assert partial.skipped_all is False

    none_left = weiszfeld_style_loss(centers, [np.array([0.0, 1.0])], [3], ce_term=0.4)
    assert none_left.skipped_all is True
    assert none_left.value == 0.4

    empty = weiszfeld_style_loss(centers, [], [], ce_term=0.1)
    assert empty.skipped_all is True
    assert empty.value == 0.1


# --- prompt consistency -------------------------------------------------------------------------

def test_consistency_loss_is_zero_at_zero_prompt() -> None:
    rng = np.random.default_rng(1)
    e = _prompt_expert(rng, d_in=5, d_embed=4, c=3)
    e.prompt = np.zeros(4)
    assert prompt_consistency_loss(e, rng.normal(size=(12, 5))) == 0.0


def test_consistency_loss_is_non_negative() -> None:
    rng = np.random.default_rng(2)
    e = _prompt_expert(rng, d_in=5, d_embed=4, c=3)
    x = rng.normal(size=(8, 5))
    for _ in range(1000):
        e.prompt = rng.normal(scale=float(rng.uniform(0.01, 3.0)), size=4)
        assert prompt_consistency_loss(e, x) >= -1e-12


def test_consistency_loss_two_category_hand_case() -> None:
    e = PromptExpert(encoder_u=np.eye(2), anchors=np.eye(2), prompt=np.array([0.0, 1.0]), temperature=0.5)
    x = np.array([[3.0, 1.0]])

    v = x[0] / np.linalg.norm(x[0])
    p0 = softmax(np.array([v[0], v[1]]) / 0.5)
    a0 = np.array([1.0, 1.0]) / np.sqrt(2.0)
    a1 = np.array([0.0, 1.0])
    p = softmax(np.array([v @ a0, v @ a1]) / 0.5)

    assert prompt_consistency_loss(e, x) == pytest.approx(kl_divergence(p0, p), abs=1e-12)


def test_consistency_loss_rejects_empty_set() -> None:
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError, match="non-empty"):
        prompt_consistency_loss(_prompt_expert(rng, 4, 3, 2), np.zeros((0, 4)))


# --- joint distribution and mutual information -------------------------------------------------------

def test_joint_distribution_examples() -> None:
    j = joint_distribution([[1.0, 0.0]], [[0.0, 1.0]])
    assert j.table.tolist() == [[0.0, 1.0], [0.0, 0.0]]
    assert j.row_marginals.tolist() == [1.0, 0.0]
    assert j.col_marginals.tolist() == [0.0, 1.0]

    uniform = np.full((6, 2), 0.5)
    assert joint_distribution(uniform, uniform).table.tolist() == [[0.25, 0.25], [0.25, 0.25]]


def test_joint_distribution_matches_double_loop() -> None:
    rng = np.random.default_rng(4)
    s, v = _probs(rng, 5, 4), _probs(rng, 5, 4)
    oracle = np.zeros((4, 4))
    for n in range(5):
        for i in range(4):
            for k in range(4):
                oracle[i, k] += s[n, i] * v[n, k] / 5

    j = joint_distribution(s, v)

    assert np.max(np.abs(j.table - oracle)) <= 1e-15
    assert j.table.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.max(np.abs(j.row_marginals - j.table.sum(axis=1))) <= 1e-12


def test_joint_distribution_rejects_bad_batches() -> None:
    with pytest.raises(ValueError, match="Length mismatch"):
        joint_distribution([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="non-empty"):
        joint_distribution([], [])


def test_mi_independent_joint_is_zero() -> None:
    uniform = np.full((4, 3), 1.0 / 3.0)
    rng = np.random.default_rng(5)
    assert mutual_information_loss(joint_distribution(uniform, uniform)) == pytest.approx(0.0, abs=1e-12)
    assert mutual_information_loss(joint_distribution(_probs(rng, 7, 3), uniform)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("c", [2, 3, 5])
def test_mi_perfect_agreement_is_minus_log_c(c: int) -> None:
    one_hots = np.eye(c)[np.arange(4 * c) % c]
    value = mutual_information_loss(joint_distribution(one_hots, one_hots))
    assert value == pytest.approx(-math.log(c), abs=1e-9)


def test_mi_never_positive_and_symmetric() -> None:
    rng = np.random.default_rng(6)
    for trial in range(1000):
        n, c = int(rng.integers(1, 10)), int(rng.integers(2, 6))
        a, b = _probs(rng, n, c), _probs(rng, n, c)
        value = mutual_information_loss(joint_distribution(a, b))
        assert value <= 1e-12
        if trial < 100:
            swapped = mutual_information_loss(joint_distribution(b, a))
            assert swapped == pytest.approx(value, abs=1e-12)


def test_mi_matches_double_loop_oracle() -> None:
    rng = np.random.default_rng(7)
    s, v = _probs(rng, 8, 3), _probs(rng, 8, 3)
    j = joint_distribution(s, v)
    oracle = 0.0
    for i in range(3):
        for k in range(3):
            o = j.table[i, k]
            oracle -= o * math.log(o / (j.table[i, :].sum() * j.table[:, k].sum()))
    assert mutual_information_loss(j) == pytest.approx(oracle, abs=1e-12)


def test_mi_gradients_match_finite_differences() -> None:
    rng = np.random.default_rng(8)
    s, v = _probs(rng, 6, 4), _probs(rng, 6, 4)
    _, g_os, g_ov = mutual_information_gradients(s, v)

    numeric_os = finite_diff_gradient(
        lambda flat: mutual_information_loss(joint_distribution(flat.reshape(s.shape), v)), s.ravel()
    )
    numeric_ov = finite_diff_gradient(
        lambda flat: mutual_information_loss(joint_distribution(s, flat.reshape(v.shape))), v.ravel()
    )

    _assert_gradients_match(g_os.ravel(), numeric_os)
    _assert_gradients_match(g_ov.ravel(), numeric_ov)


# --- category assignment -----------------------------------------------------------------------

def test_assign_categories_uses_average_and_lower_index_on_ties() -> None:
    os_out = np.array([[0.7, 0.3], [0.5, 0.5], [0.2, 0.8]])
    ov_out = np.array([[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]])
    assert assign_categories(os_out, ov_out).tolist() == [1, 0, 0]


# --- composite objectives ---------------------------------------------------------------------------

def _adapter_setup(rng: np.random.Generator):
    d_in, d_hidden, c, r = 4, 6, 3, 3
    while True:
        e = _source_expert(rng, d_in, d_hidden, c, r)
        pseudo_x = rng.normal(size=(int(rng.integers(1, 6)), d_in))
        complex_x = rng.normal(size=(int(rng.integers(1, 6)), d_in))
        mi_x = rng.normal(size=(int(rng.integers(2, 8)), d_in))
        if _min_abs_pre_relu(e, pseudo_x, complex_x, mi_x) > 1e-3:
            break

    center_src = rng.normal(size=(9, d_hidden))
    centers = class_centers(center_src, np.arange(9) % 2, num_categories=c)
    pseudo = Batch(pseudo_x, partner_probs=_probs(rng, len(pseudo_x), c))
    categories = rng.integers(0, c, size=len(complex_x))
    categories[0] = 0
    complex_ = Batch(complex_x, categories=categories)
    mi = Batch(mi_x, partner_probs=_probs(rng, len(mi_x), c))
    return e, pseudo, complex_, centers, mi


def test_adapter_objective_gradient_matches_oracle() -> None:
    rng = np.random.default_rng(9)
    for _ in range(20):
        e, pseudo, complex_, centers, mi = _adapter_setup(rng)
        report = adapter_objective(e, pseudo, complex_, centers, mi, ALL_ON)
        numeric = finite_diff_gradient(
            _objective_on_params(e, lambda trial: adapter_objective(trial, pseudo, complex_, centers, mi, ALL_ON)),
            flatten_params(e).flat,
        )
        assert report.grad.shape == (len(flatten_params(e)),)
        _assert_gradients_match(report.grad, numeric)


def test_prompt_objective_gradient_matches_oracle() -> None:
    rng = np.random.default_rng(10)
    for _ in range(20):
        c = int(rng.integers(2, 5))
        e = _prompt_expert(rng, d_in=5, d_embed=4, c=c)
        complex_ = Batch(rng.normal(size=(int(rng.integers(1, 6)), 5)))
        mi_x = rng.normal(size=(int(rng.integers(2, 8)), 5))
        mi = Batch(mi_x, partner_probs=_probs(rng, len(mi_x), c))

        report = prompt_objective(e, complex_, mi, ALL_ON)
        numeric = finite_diff_gradient(
            _objective_on_params(e, lambda trial: prompt_objective(trial, complex_, mi, ALL_ON)),
            flatten_params(e).flat,
        )
        _assert_gradients_match(report.grad, numeric)


def test_warmup_objective_gradients_match_oracle() -> None:
    rng = np.random.default_rng(11)
    for _ in range(5):
        e_s, pseudo, _, _, _ = _adapter_setup(rng)
        report = warmup_adapter_objective(e_s, pseudo)
        numeric = finite_diff_gradient(
            _objective_on_params(e_s, lambda trial: warmup_adapter_objective(trial, pseudo)),
            flatten_params(e_s).flat,
        )
        _assert_gradients_match(report.grad, numeric)

        e_v = _prompt_expert(rng, d_in=4, d_embed=4, c=3)
        prompt_batch = Batch(pseudo.inputs, partner_probs=pseudo.partner_probs)
        report_v = warmup_prompt_objective(e_v, prompt_batch)
        numeric_v = finite_diff_gradient(
            _objective_on_params(e_v, lambda trial: warmup_prompt_objective(trial, prompt_batch)),
            flatten_params(e_v).flat,
        )
        _assert_gradients_match(report_v.grad, numeric_v)


def test_warmup_step_size_does_not_grow_with_batch_length() -> None:
    rng = np.random.default_rng(14)
    e_s, pseudo, _, _, _ = _adapter_setup(rng)
    one = Batch(pseudo.inputs[:1], partner_probs=pseudo.partner_probs[:1])
    repeated = Batch(np.repeat(one.inputs, 64, axis=0), partner_probs=np.repeat(one.partner_probs, 64, axis=0))

    single = warmup_adapter_objective(e_s, one)
    batch = warmup_adapter_objective(e_s, repeated)
    assert batch.total == pytest.approx(single.total, rel=1e-12)
    assert batch.grad.tolist() == pytest.approx(single.grad.tolist(), rel=1e-9, abs=1e-15)
    assert batch.total == pytest.approx(consensus_ce_loss(
        source_forward_batch(e_s, one.inputs).probs, one.partner_probs
    ))

    e_v = _prompt_expert(rng, d_in=4, d_embed=4, c=3)
    single_v = warmup_prompt_objective(e_v, one)
    batch_v = warmup_prompt_objective(e_v, repeated)
    assert batch_v.grad.tolist() == pytest.approx(single_v.grad.tolist(), rel=1e-9, abs=1e-15)


def test_adapter_objective_zero_adapter_centers_on_backbone_features() -> None:
    rng = np.random.default_rng(12)
    e = _source_expert(rng, d_in=4, d_hidden=6, c=3, r=2)
    e.adapter_up = np.zeros_like(e.adapter_up)
    x = rng.normal(size=(3, 4))
    hidden = source_forward_batch(e, x, use_adapter=False).hidden
    centers = CenterBank(centers={c: hidden[c] for c in range(3)}, support_counts={c: 1 for c in range(3)})

    report = adapter_objective(
        e, None, Batch(x, categories=np.array([0, 1, 2])), centers, None, LossToggles(weisz=True, psc=False, mi=False)
    )

    assert report.components[COMPONENT_WEISZ] == pytest.approx(0.0, abs=1e-12)
    assert COMPONENT_CE not in report.components


def test_adapter_objective_counts_complex_samples_without_a_center() -> None:
    rng = np.random.default_rng(16)
    e = _source_expert(rng, d_in=4, d_hidden=6, c=3, r=2)
    x = rng.normal(size=(4, 4))
    hidden = source_forward_batch(e, x, use_adapter=True).adapted
    centers = CenterBank(centers={0: hidden[0] + 0.5}, support_counts={0: 1})
    weisz_only = LossToggles(weisz=True, psc=False, mi=False)

    mixed = adapter_objective(e, None, Batch(x, categories=np.array([0, 2, 0, 1])), centers, None, weisz_only)
    kept = adapter_objective(e, None, Batch(x[[0, 2]], categories=np.array([0, 0])), centers, None, weisz_only)

    assert mixed.counts == {COUNT_WEISZ_SKIPPED: 2}
    assert kept.counts == {COUNT_WEISZ_SKIPPED: 0}
    assert mixed.components[COMPONENT_WEISZ] == pytest.approx(kept.components[COMPONENT_WEISZ], abs=1e-12)
    assert mixed.grad.tolist() == pytest.approx(kept.grad.tolist(), abs=1e-12)

    none_left = adapter_objective(e, None, Batch(x, categories=np.array([1, 2, 1, 2])), centers, None, weisz_only)
    assert none_left.counts == {COUNT_WEISZ_SKIPPED: 4}
    assert none_left.components == {}
    assert not none_left.grad.any()


def test_adapter_objective_mi_bookkeeping_is_additive() -> None:
    rng = np.random.default_rng(13)
    e, pseudo, complex_, centers, mi = _adapter_setup(rng)

    full = adapter_objective(e, pseudo, complex_, centers, mi, ALL_ON)
    no_mi = adapter_objective(e, pseudo, complex_, centers, mi, LossToggles(weisz=True, psc=True, mi=False))

    assert set(full.components) == {COMPONENT_WEISZ, COMPONENT_CE, COMPONENT_MI}
    assert full.total - no_mi.total == pytest.approx(full.components[COMPONENT_MI], abs=1e-12)
    assert full.total == pytest.approx(sum(full.components.values()), abs=1e-12)


def test_objectives_with_everything_off_are_empty() -> None:
    rng = np.random.default_rng(14)
    e, pseudo, complex_, centers, mi = _adapter_setup(rng)
    off = LossToggles(weisz=False, psc=False, mi=False)

    report = adapter_objective(e, pseudo, complex_, centers, mi, off)

    assert report.components == {}
    assert report.total == 0.0
    assert not report.grad.any()


def test_prompt_objective_neutral_case() -> None:
    rng = np.random.default_rng(15)
    e = _prompt_expert(rng, d_in=5, d_embed=4, c=3)
    e.prompt = np.zeros(4)
    x = rng.normal(size=(6, 5))

    report = prompt_objective(e, Batch(x), Batch(x, partner_probs=np.full((6, 3), 1.0 / 3.0)), ALL_ON)

    assert report.components[COMPONENT_PSC] == 0.0
    assert report.components[COMPONENT_MI] == pytest.approx(0.0, abs=1e-12)


def test_prompt_objective_is_order_invariant() -> None:
    rng = np.random.default_rng(16)
    e = _prompt_expert(rng, d_in=5, d_embed=4, c=3)
    x = rng.normal(size=(10, 5))
    partner = _probs(rng, 10, 3)
    perm = rng.permutation(10)

    a = prompt_objective(e, Batch(x), Batch(x, partner_probs=partner), ALL_ON)
    b = prompt_objective(e, Batch(x[perm]), Batch(x[perm], partner_probs=partner[perm]), ALL_ON)

    assert b.total == pytest.approx(a.total, abs=1e-9)


def test_mi_component_is_shared_between_experts() -> None:
    rng = np.random.default_rng(17)
    source = _source_expert(rng, d_in=5, d_hidden=6, c=3, r=2)
    prompt = _prompt_expert(rng, d_in=5, d_embed=4, c=3)
    x = rng.normal(size=(12, 5))
    os_live = source_forward_batch(source, x).probs
    ov_live = prompt_forward_batch(prompt, x).probs
    mi_only = LossToggles(weisz=False, psc=False, mi=True)

    adapter_side = adapter_objective(source, None, None, CenterBank(), Batch(x, partner_probs=ov_live), mi_only)
    prompt_side = prompt_objective(prompt, None, Batch(x, partner_probs=os_live), mi_only)

    assert adapter_side.components[COMPONENT_MI] == pytest.approx(prompt_side.components[COMPONENT_MI], abs=1e-12)


def test_objectives_require_partner_outputs() -> None:
    rng = np.random.default_rng(18)
    e = _prompt_expert(rng, d_in=5, d_embed=4, c=3)
    with pytest.raises(ValueError, match="partner_probs"):
        prompt_objective(e, None, Batch(rng.normal(size=(3, 5))), ALL_ON)


def test_loss_report_checks_its_total() -> None:
    with pytest.raises(ValueError, match="does not match"):
        LossReport(total=1.0, components={COMPONENT_MI: 0.5})
