import json
import math

import numpy as np
import pytest
from conftest import random_logits, random_targets
from hypothesis import given
from hypothesis import strategies as st

from dense_ntp.errors import GridMismatch
from dense_ntp.loss import (
    LOSS_KINDS,
    InvalidK,
    LogitsGrid,
    UnknownBaseline,
    baseline_loss,
    bernoulli_nll,
    compute_loss,
    ntpm_loss,
    select_relevant_negatives,
)
from dense_ntp.targets import NONE, TargetSet

seeds = st.integers(0, 2**32 - 1)


def one_token(z, pos, valid, majority=NONE):
    z = np.asarray(z, float)[None, :]
    V = z.shape[1]
    P = np.zeros((1, V), bool)
    M = np.zeros((1, V), bool)
    P[0, list(pos)] = True
    M[0, list(valid)] = True
    return LogitsGrid(1, 1, z), TargetSet(1, 1, P, M, np.array([majority]))


# -- scalar oracles, written independently of the vectorized code -----------


def log_sig(z):
    return -math.log1p(math.exp(-z)) if z >= 0 else z - math.log1p(math.exp(z))


def bce(z, y):
    return -(log_sig(z) if y else log_sig(-z))


def oracle_ntpm(Z, t, k):
    total = 0.0
    for i in range(t.n_tokens):
        P = [v for v in range(t.vocab_size) if t.positives[i, v] and t.validity[i, v]]
        C = [v for v in range(t.vocab_size) if t.validity[i, v] and not t.positives[i, v]]
        C.sort(key=lambda v: (-Z[i, v], v))
        N = C[:k]
        if P:
            total += sum(-log_sig(Z[i, v]) for v in P) / len(P)
        if N:
            total += sum(-log_sig(-Z[i, v]) for v in N) / len(N)
    return total


def oracle_baseline(kind, Z, t, params):
    L, V = Z.shape
    cells = [(i, v) for i in range(L) for v in range(V) if t.validity[i, v]]
    if kind == "ntp_ce":
        total = 0.0
        for i in range(L):
            M = [v for v in range(V) if t.validity[i, v]]
            if t.majority[i] == NONE or not M:
                continue
            m = max(Z[i, v] for v in M)
            lse = m + math.log(sum(math.exp(Z[i, v] - m) for v in M))
            total += lse - Z[i, t.majority[i]]
        return total
    if kind == "raw_bce":
        return sum(bce(Z[c], t.positives[c]) for c in cells) / len(cells) if cells else 0.0
    if kind == "focal":
        g, a = params.get("gamma", 2.0), params.get("alpha", 0.25)
        out = 0.0
        for c in cells:
            p = 1 / (1 + math.exp(-Z[c]))
            if t.positives[c]:
                out += a * (1 - p) ** g * -log_sig(Z[c])
            else:
                out += (1 - a) * p**g * -log_sig(-Z[c])
        return out / len(cells) if cells else 0.0
    if kind == "ohem":
        frac = params.get("fraction", 0.25)
        if not cells:
            return 0.0
        losses = sorted(((bce(Z[c], t.positives[c]), c[0] * V + c[1]) for c in cells), key=lambda x: (-x[0], x[1]))
        n = max(1, math.ceil(frac * len(cells) - 1e-9))
        return sum(l for l, _ in losses[:n]) / n
    if kind == "balanced_bce":
        total = 0.0
        for i in range(L):
            P = [v for v in range(V) if t.positives[i, v] and t.validity[i, v]]
            C = [v for v in range(V) if t.validity[i, v] and not t.positives[i, v]]
            total += sum(bce(Z[i, v], 1) for v in P)
            if C:
                total += len(P) / len(C) * sum(bce(Z[i, v], 0) for v in C)
        return total
    if kind == "indiv_mean":
        return oracle_ntpm(Z, t, V + 1)
    raise KeyError(kind)


# -- worked examples -------------------------------------------------------


def test_nll_zero_logit_positive():
    lg, t = one_token([0.0], [0], [0])
    assert bernoulli_nll(lg, t) == pytest.approx(math.log(2), abs=1e-12)


def test_nll_saturated():
    lg, t = one_token([20.0, -20.0], [0], [0, 1])
    expected = 2 * math.log1p(math.exp(-20.0))
    assert bernoulli_nll(lg, t) == pytest.approx(expected, rel=1e-12)
    assert bernoulli_nll(lg, t) == pytest.approx(4.1e-9, rel=0.01)


def test_nll_all_invalid_is_zero():
    lg, t = one_token([3.0, -1.0], [], [])
    assert bernoulli_nll(lg, t) == 0.0


def test_top_k_example():
    lg, t = one_token([0.9, 0.1, 0.5], [], [0, 1, 2])
    assert list(select_relevant_negatives(lg, t, 2)[0]) == [0, 2]


def test_top_k_larger_than_candidates():
    lg, t = one_token([0.9, 0.1, 0.5, 4.0], [3], [0, 1, 2, 3])
    assert list(select_relevant_negatives(lg, t, 10)[0]) == [0, 1, 2]


def test_top_k_ties_go_to_small_ids():
    lg, t = one_token([1.0] * 6, [2], range(6))
    assert list(select_relevant_negatives(lg, t, 2)[0]) == [0, 1]
    assert list(select_relevant_negatives(lg, t, 4)[0]) == [0, 1, 3, 4]


def test_ntpm_two_ln2():
    lg, t = one_token([0.0, 0.0], [0], [0, 1])
    rep = ntpm_loss(lg, t, k=1)
    assert rep.value == pytest.approx(2 * math.log(2), abs=1e-12)
    np.testing.assert_allclose(rep.grad, [[-0.5, 0.5]])


def test_ntpm_empty_token_is_zero():
    lg, t = one_token([1.0, 2.0], [], [])
    rep = ntpm_loss(lg, t, k=4)
    assert rep.value == 0.0
    assert not rep.grad.any()


def test_ntpm_divides_by_realized_count():
    # two candidates with k = 32: mean over the two, not /32
    lg, t = one_token([0.0, 0.0, 0.0], [0], [0, 1, 2])
    assert ntpm_loss(lg, t, k=32).value == pytest.approx(2 * math.log(2), abs=1e-12)


def test_ntpm_no_positives_keeps_negative_term():
    lg, t = one_token([0.0, 0.0], [], [0, 1])
    assert ntpm_loss(lg, t, k=1).value == pytest.approx(math.log(2), abs=1e-12)


def test_invalid_k():
    lg, t = one_token([0.0], [0], [0])
    with pytest.raises(InvalidK):
        ntpm_loss(lg, t, k=0)


def test_grid_mismatch():
    _, t = one_token([0.0, 0.0], [0], [0, 1])
    with pytest.raises(GridMismatch):
        ntpm_loss(LogitsGrid(1, 1, np.zeros((1, 3))), t)
    with pytest.raises(GridMismatch):
        LogitsGrid(2, 2, np.zeros((3, 2)))


def test_ntp_ce_uniform():
    lg, t = one_token([1.5, 1.5], [0], [0, 1], majority=0)
    assert baseline_loss("ntp_ce", lg, t).value == pytest.approx(math.log(2), abs=1e-12)


def test_raw_bce_is_mean_nll():
    lg, t = one_token([20.0, -20.0], [0], [0, 1])
    assert baseline_loss("raw_bce", lg, t).value == pytest.approx(bernoulli_nll(lg, t) / 2, rel=1e-12)


def test_unknown_baseline():
    lg, t = one_token([0.0], [0], [0])
    with pytest.raises(UnknownBaseline):
        baseline_loss("dice", lg, t)


def test_bad_params():
    lg, t = one_token([0.0], [0], [0])
    with pytest.raises(ValueError):
        baseline_loss("focal", lg, t, {"gamma": -1})
    with pytest.raises(ValueError):
        baseline_loss("ohem", lg, t, {"fraction": 0})


def test_report_json():
    lg, t = one_token([0.0, 1.0, 2.0], [0], [0, 1, 2])
    doc = json.loads(ntpm_loss(lg, t, k=1).to_json())
    assert doc["k"] == 1
    assert doc["per_token"] == [{"positives": [0], "selected_negatives": [2]}]


# -- properties ------------------------------------------------------------


@given(seeds)
def test_nll_equals_elementwise_bce_sum(seed):
    rng = np.random.default_rng(seed)
    t = random_targets(rng)
    Z = random_logits(rng, t)
    ref = sum(bce(Z[i, v], t.positives[i, v]) for i in range(t.n_tokens) for v in range(t.vocab_size) if t.validity[i, v])
    assert abs(bernoulli_nll(LogitsGrid(t.grid_w, t.grid_h, Z), t) - ref) <= 1e-9


@given(seeds, st.integers(1, 20))
def test_ntpm_matches_loop_oracle(seed, k):
    rng = np.random.default_rng(seed)
    t = random_targets(rng)
    Z = random_logits(rng, t)
    # integer-valued logits force plenty of ties
    if seed % 2:
        Z = np.round(Z)
    got = ntpm_loss(LogitsGrid(t.grid_w, t.grid_h, Z), t, k).value
    assert got == pytest.approx(oracle_ntpm(Z, t, k), rel=1e-12, abs=1e-12)


@given(seeds, st.sampled_from(sorted(set(LOSS_KINDS) - {"ntpm"})), st.floats(0.05, 1.0))
def test_baselines_match_loop_oracle(seed, kind, frac):
    rng = np.random.default_rng(seed)
    t = random_targets(rng)
    Z = random_logits(rng, t)
    params = {"fraction": frac} if kind == "ohem" else {}
    got = baseline_loss(kind, LogitsGrid(t.grid_w, t.grid_h, Z), t, params).value
    assert got == pytest.approx(oracle_baseline(kind, Z, t, params), rel=1e-12, abs=1e-12)


@given(seeds)
def test_degenerate_k_equals_indiv_mean(seed):
    rng = np.random.default_rng(seed)
    t = random_targets(rng)
    lg = LogitsGrid(t.grid_w, t.grid_h, random_logits(rng, t))
    kmax = max(1, int(t.candidates().sum(axis=1).max()))
    a = ntpm_loss(lg, t, kmax)
    b = baseline_loss("indiv_mean", lg, t)
    assert abs(a.value - b.value) <= 1e-12
    np.testing.assert_allclose(a.grad, b.grad, atol=1e-15)


@given(seeds)
def test_ohem_full_fraction_is_raw_bce(seed):
    rng = np.random.default_rng(seed)
    t = random_targets(rng)
    lg = LogitsGrid(t.grid_w, t.grid_h, random_logits(rng, t))
    a = baseline_loss("ohem", lg, t, {"fraction": 1.0})
    b = baseline_loss("raw_bce", lg, t)
    assert a.value == pytest.approx(b.value, rel=1e-12, abs=1e-15)
    np.testing.assert_allclose(a.grad, b.grad, atol=1e-15)


@given(seeds, st.sampled_from(LOSS_KINDS))
def test_gradient_matches_finite_differences(seed, kind):
    rng = np.random.default_rng(seed)
    t = random_targets(rng, vocab=int(rng.integers(2, 8)))
    Z = random_logits(rng, t, scale=1.5)
    k = int(rng.integers(1, 5))
    rep = compute_loss(kind, LogitsGrid(t.grid_w, t.grid_h, Z), t, k)
    # long-double evaluation keeps the difference quotient above round-off
    Zl = Z.astype(np.longdouble)
    h = np.longdouble(1e-7)
    for i in range(Z.shape[0]):
        for v in range(Z.shape[1]):
            old = Zl[i, v]
            Zl[i, v] = old + h
            fp = compute_loss(kind, LogitsGrid(t.grid_w, t.grid_h, Zl), t, k).value
            Zl[i, v] = old - h
            fm = compute_loss(kind, LogitsGrid(t.grid_w, t.grid_h, Zl), t, k).value
            Zl[i, v] = old
            num = float((fp - fm) / (2 * h))
            assert rep.grad[i, v] == pytest.approx(num, rel=1e-6, abs=1e-9), (kind, i, v)


@given(seeds, st.sampled_from(LOSS_KINDS))
def test_gradient_vanishes_outside_validity(seed, kind):
    rng = np.random.default_rng(seed)
    t = random_targets(rng)
    rep = compute_loss(kind, LogitsGrid(t.grid_w, t.grid_h, random_logits(rng, t)), t, 3)
    assert not np.any(rep.grad[~t.validity])


@given(seeds, st.sampled_from(LOSS_KINDS))
def test_non_negative(seed, kind):
    rng = np.random.default_rng(seed)
    t = random_targets(rng)
    lg = LogitsGrid(t.grid_w, t.grid_h, random_logits(rng, t, scale=10.0))
    assert compute_loss(kind, lg, t, 4).value >= 0.0


@given(seeds, st.sampled_from(LOSS_KINDS))
def test_permutation_invariance(seed, kind):
    rng = np.random.default_rng(seed)
    t = random_targets(rng)
    Z = random_logits(rng, t)
    # distinct logits, so top-k and OHEM selections do not depend on tie-breaking by position
    Z = Z + 1e-6 * rng.permutation(Z.size).reshape(Z.shape)
    rows = rng.permutation(t.n_tokens)
    cols = rng.permutation(t.vocab_size)
    inv = np.argsort(cols)
    maj = np.where(t.majority == NONE, NONE, inv[np.maximum(t.majority, 0)])[rows]
    t2 = TargetSet(t.grid_w, t.grid_h, t.positives[rows][:, cols], t.validity[rows][:, cols], maj)
    a = compute_loss(kind, LogitsGrid(t.grid_w, t.grid_h, Z), t, 3).value
    b = compute_loss(kind, LogitsGrid(t.grid_w, t.grid_h, Z[rows][:, cols]), t2, 3).value
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


@given(seeds)
def test_ntpm_vanishes_at_confident_logits(seed):
    rng = np.random.default_rng(seed)
    t = random_targets(rng)
    Z = np.where(t.positives, 40.0, -40.0)
    assert ntpm_loss(LogitsGrid(t.grid_w, t.grid_h, Z), t, 4).value < 1e-15
