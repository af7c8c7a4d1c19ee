import json
import math

import numpy as np
import pytest

from margnet.domain import Dataset
from margnet.errors import InsufficientBudget
from margnet.generator import forward, init_generator
from margnet.marginals import Marginal, compute_marginal, marginal_spec, tvd
from margnet.privacy import Accountant
from margnet.synthesis import (
    Measurement,
    SynthConfig,
    candidate_scores,
    compute_weights,
    run_fixed_round,
    run_margnet,
    split_budget,
    trace_from_json_dict,
    warmup,
)
from margnet.generator import soft_marginal

from conftest import categorical_domain, random_dataset


def tiny_config(**kw):
    base = dict(rho_total=0.05, c=8.0, train_iters=12, lr=5e-3, batch_size=16,
                hidden=(16,), latent_dim=8, seed=0)
    base.update(kw)
    return SynthConfig(**base)


# ------------------------------------------------------------- split budget

def test_split_budget_paper_defaults():
    rho_s, rho_m = split_budget(1.0, 160.0)  # c = 16*d with d=10
    assert rho_s == pytest.approx(0.000625)
    assert rho_m == pytest.approx(0.005625)


def test_split_budget_unit():
    rho_s, rho_m = split_budget(160.0, 160.0)
    assert rho_s == pytest.approx(0.1)
    assert rho_m == pytest.approx(0.9)


def test_split_budget_exact_identity():
    rng = np.random.default_rng(1)
    for _ in range(200):
        rho = float(rng.uniform(1e-6, 50))
        c = float(rng.uniform(1, 400))
        rho_s, rho_m = split_budget(rho, c)
        unit = rho / c
        assert abs((rho_s + rho_m) - unit) <= np.spacing(unit)  # within 1 ulp


# ------------------------------------------------------------------ weights

def mk_measurement(cards, attrs, rho_m, newly=False, round_=1):
    spec = marginal_spec(cards, attrs)
    return Measurement(spec=spec, noisy=Marginal(spec, np.zeros(spec.n_cells)),
                       rho_m=rho_m, sigma=1.0, round=round_, newly_selected=newly)


def test_weights_new_gets_d_times_old():
    cards = (2, 2, 2, 2)
    d = 4
    ms = [mk_measurement(cards, (i,), 0.1) for i in range(3)]
    ms.append(mk_measurement(cards, (0, 1), 0.1, newly=True))
    compute_weights(ms, d)
    assert ms[3].weight == pytest.approx(d)
    for m in ms[:3]:
        assert m.weight == pytest.approx(1.0)


def test_weights_sqrt_rho():
    cards = (2, 2)
    ms = [mk_measurement(cards, (0,), 0.1), mk_measurement(cards, (1,), 0.4)]
    compute_weights(ms, 2)
    assert ms[1].weight == pytest.approx(2 * ms[0].weight)  # rho x4 -> weight x2
    assert max(m.weight for m in ms) == pytest.approx(2.0)  # max == d


def test_weights_single_new():
    cards = (2, 2, 2)
    ms = [mk_measurement(cards, (0, 1), 0.1, newly=True)]
    compute_weights(ms, 3)
    assert ms[0].weight == pytest.approx(3.0)


# ------------------------------------------------------------------- warmup

def test_warmup_charges_d_rho_m():
    dom = categorical_domain([2, 3, 2])
    ds = random_dataset(dom.cards, 200, seed=3)
    acct = Accountant(rho_budget=1.0)
    cfg = tiny_config(train_iters=2)
    model = init_generator(dom, [8], 4, 8, seed=0)
    rng = np.random.default_rng(0)
    warmup(ds, dom, model, acct, 0.01, cfg, rng, rng)
    assert acct.rho_used == pytest.approx(0.03)
    assert [lab for lab, _ in acct.ledger] == [f"warmup:one-way:{i}" for i in range(3)]


def test_warmup_insufficient_budget_before_noise():
    dom = categorical_domain([2, 3, 2])
    ds = random_dataset(dom.cards, 200, seed=3)
    acct = Accountant(rho_budget=0.02)
    model = init_generator(dom, [8], 4, 8, seed=0)
    rng = np.random.default_rng(0)
    with pytest.raises(InsufficientBudget):
        warmup(ds, dom, model, acct, 0.01, tiny_config(), rng, rng)
    assert acct.rho_used == 0.0
    assert acct.ledger == []


def test_warmup_noise_free_training_converges():
    dom = categorical_domain([3, 3])
    rng = np.random.default_rng(8)
    rows = np.stack([rng.integers(0, 3, 400), rng.integers(0, 3, 400)], axis=1)
    ds = Dataset(rows=rows, cards=dom.cards)
    acct = Accountant(rho_budget=1.0)
    cfg = tiny_config(train_iters=300, lr=1e-2, noise_free=True)
    model = init_generator(dom, [16], 8, 32, seed=1)
    rng_m = np.random.default_rng(1)
    rng_t = np.random.default_rng(2)
    _, n_est = warmup(ds, dom, model, acct, 0.01, cfg, rng_m, rng_t)
    assert n_est == 400.0  # noise-free sums are exact
    sb = forward(model)
    for a in range(2):
        spec = marginal_spec(ds, (a,))
        soft = soft_marginal(sb, spec, n_est)
        assert tvd(soft, compute_marginal(ds, spec)) < 0.05


# ---------------------------------------------------------------- scoring

def test_candidate_scores_perfect_fit():
    dom = categorical_domain([2, 2])
    ds = random_dataset(dom.cards, 100, seed=5)
    model = init_generator(dom, [8], 4, 8, seed=2)
    spec = marginal_spec(ds, (0, 1))
    # make the "exact" marginal equal the model's soft marginal
    soft = soft_marginal(forward(model), spec, 100.0)
    rho_m = 0.25
    scores = candidate_scores(model, {spec.attrs: soft}, [spec], rho_m, {}, 100.0)
    assert scores[0] == pytest.approx(-spec.n_cells / math.sqrt(math.pi * rho_m))


def test_candidate_scores_arithmetic():
    dom = categorical_domain([2, 2])
    ds = random_dataset(dom.cards, 50, seed=6)
    model = init_generator(dom, [8], 4, 8, seed=3)
    spec = marginal_spec(ds, (0, 1))
    exact = {spec.attrs: compute_marginal(ds, spec)}
    rho_m = 1.0 / math.pi  # noise term becomes exactly n_i
    scores = candidate_scores(model, exact, [spec], rho_m, {}, 50.0)
    from margnet.marginals import l1_distance
    gap = l1_distance(soft_marginal(forward(model), spec, 50.0), exact[spec.attrs])
    assert scores[0] == pytest.approx(gap - 4.0)


def test_candidate_scores_r_scaling_preserves_argmax():
    dom = categorical_domain([2, 2, 2])
    ds = random_dataset(dom.cards, 300, seed=7)
    model = init_generator(dom, [8], 4, 8, seed=4)
    specs = [marginal_spec(ds, p) for p in [(0, 1), (0, 2), (1, 2)]]
    exact = {s.attrs: compute_marginal(ds, s) for s in specs}
    ones = {s.attrs: 1.0 for s in specs}
    tripled = {s.attrs: 3.0 for s in specs}
    s1 = candidate_scores(model, exact, specs, 0.1, ones, 300.0)
    s3 = candidate_scores(model, exact, specs, 0.1, tripled, 300.0)
    assert np.allclose(s3, 3 * s1)
    assert np.argmax(s1) == np.argmax(s3)


# ---------------------------------------------------------------- full runs

def test_run_filter_and_structure():
    dom = categorical_domain([3, 2, 4])
    ds = random_dataset(dom.cards, 800, seed=9)
    res = run_margnet(ds, dom, tiny_config(seed=5))
    acct = res.accountant
    assert math.fsum(r for _, r in acct.ledger) <= acct.rho_budget
    assert acct.rho_used <= acct.rho_budget
    # output dataset satisfies its invariants (Dataset validates on build)
    assert res.synth.cards == dom.cards
    assert res.synth.rows.min() >= 0
    assert np.all(res.synth.rows.max(axis=0) < np.array(dom.cards))


def test_ledger_decomposition_exact():
    dom = categorical_domain([3, 3, 3])
    ds = random_dataset(dom.cards, 500, seed=10)
    res = run_margnet(ds, dom, tiny_config(seed=6))
    ledger = res.accountant.ledger
    d = dom.d
    warm = [rho for lab, rho in ledger if lab.startswith("warmup")]
    assert len(warm) == d
    per_round = [rho for lab, rho in ledger if not lab.startswith("warmup")]
    assert len(per_round) == 2 * len(res.trace.rounds)  # select + measure each round
    total = math.fsum(warm) + math.fsum(per_round)
    assert total == pytest.approx(res.accountant.rho_used, abs=1e-15)
    assert total <= res.accountant.rho_budget
    # trace's per-round budgets match the ledger entries
    for rec, (s_lab, s_rho), (m_lab, m_rho) in zip(
        res.trace.rounds, per_round_entries(ledger)[0::2], per_round_entries(ledger)[1::2]
    ):
        assert rec.rho_s == s_rho
        assert rec.rho_m == m_rho


def per_round_entries(ledger):
    return [(lab, rho) for lab, rho in ledger if not lab.startswith("warmup")]


def test_doubling_at_most_once_per_spec():
    dom = categorical_domain([2, 2, 2, 2])
    ds = random_dataset(dom.cards, 300, seed=11)
    for seed in range(5):
        res = run_margnet(ds, dom, tiny_config(seed=seed, rho_total=0.02, c=10.0))
        doubled_specs = [r.attrs for r in res.trace.rounds if r.doubled]
        assert len(doubled_specs) == len(set(doubled_specs))
        first_seen = set()
        for r in res.trace.rounds:
            if r.doubled:
                assert r.attrs not in first_seen
            first_seen.add(r.attrs)


def test_rho_m_nondecreasing_until_last():
    dom = categorical_domain([3, 3, 3])
    ds = random_dataset(dom.cards, 600, seed=12)
    for seed in range(5):
        res = run_margnet(ds, dom, tiny_config(seed=seed))
        rho_ms = [r.rho_m for r in res.trace.rounds]
        for a, b in zip(rho_ms[:-2], rho_ms[1:-1]):
            assert b >= a - 1e-15


def test_generous_budget_measures_all_pairs():
    # with plenty of budget the selector should cover every two-way marginal
    dom = categorical_domain([3, 3, 3])
    ok = 0
    for seed in range(10):
        ds = random_dataset(dom.cards, 1000, seed=100 + seed)
        res = run_margnet(ds, dom, tiny_config(seed=seed, rho_total=5.0, c=12.0, train_iters=8))
        seen = {r.attrs for r in res.trace.rounds}
        if seen == {(0, 1), (0, 2), (1, 2)}:
            ok += 1
    assert ok >= 9


def test_trace_replay_byte_identical():
    dom = categorical_domain([3, 2, 3])
    ds = random_dataset(dom.cards, 400, seed=13)
    cfg = tiny_config(seed=21)
    a = run_margnet(ds, dom, cfg)
    b = run_margnet(ds, dom, cfg)
    assert json.dumps(a.trace.to_json_dict()) == json.dumps(b.trace.to_json_dict())
    assert np.array_equal(a.synth.rows, b.synth.rows)


def test_trace_json_round_trip():
    dom = categorical_domain([3, 2, 3])
    ds = random_dataset(dom.cards, 400, seed=13)
    res = run_margnet(ds, dom, tiny_config(seed=22))
    obj = json.loads(json.dumps(res.trace.to_json_dict()))
    back = trace_from_json_dict(obj, dom.cards)
    assert back.n_estimate == res.trace.n_estimate
    assert len(back.rounds) == len(res.trace.rounds)
    assert [r.attrs for r in back.rounds] == [r.attrs for r in res.trace.rounds]
    assert np.allclose(back.measurements[0].noisy.counts, res.trace.measurements[0].noisy.counts)


def test_em_scores_use_pre_round_model():
    # the recorded score of the final round must be reproducible from the
    # persisted pre-round model state (G^{K-1}), i.e. scores are computed
    # before that round's measurement and training
    dom = categorical_domain([3, 3, 3])
    ds = random_dataset(dom.cards, 600, seed=14)
    cfg = tiny_config(seed=30, rho_total=0.06, c=9.0)
    res = run_margnet(ds, dom, cfg)
    assert len(res.trace.rounds) >= 1
    final = res.trace.rounds[-1]
    spec = marginal_spec(ds, final.attrs)
    est = soft_marginal(forward(res.prev_model), spec, res.n_estimate)
    from margnet.marginals import l1_distance
    gap = l1_distance(est, compute_marginal(ds, spec))
    recomputed = gap - spec.n_cells / math.sqrt(math.pi * final.rho_m)
    assert recomputed == pytest.approx(final.score, rel=1e-12)


def test_resampled_input_mode_runs_and_replays():
    # ablation flag: a fresh latent batch per training iteration
    dom = categorical_domain([3, 3])
    ds = random_dataset(dom.cards, 400, seed=19)
    cfg = tiny_config(seed=31, fixed_input=False)
    a = run_margnet(ds, dom, cfg)
    b = run_margnet(ds, dom, cfg)
    assert json.dumps(a.trace.to_json_dict()) == json.dumps(b.trace.to_json_dict())
    assert np.array_equal(a.synth.rows, b.synth.rows)
    assert a.synth.cards == dom.cards


# --------------------------------------------------------------- fixed mode

def test_fixed_round_k1():
    dom = categorical_domain([2, 3, 2])
    ds = random_dataset(dom.cards, 300, seed=15)
    res = run_fixed_round(ds, dom, tiny_config(seed=7), k_rounds=1)
    assert len(res.trace.rounds) == 1


def test_fixed_round_budget_arithmetic():
    dom = categorical_domain([2, 3, 2])
    ds = random_dataset(dom.cards, 300, seed=16)
    cfg = tiny_config(seed=8, rho_total=0.04, c=6.0)
    k = 5
    res = run_fixed_round(ds, dom, cfg, k_rounds=k)
    assert len(res.trace.rounds) == k
    d = dom.d
    _, rho_m_warm = split_budget(cfg.rho_total, 6.0)
    per_round = res.trace.rounds[0]
    total = d * rho_m_warm + k * (per_round.rho_s + per_round.rho_m)
    assert res.accountant.rho_used == pytest.approx(total, abs=1e-10)
    assert res.accountant.rho_used <= cfg.rho_total


def test_fixed_round_deterministic():
    dom = categorical_domain([2, 3, 2])
    ds = random_dataset(dom.cards, 300, seed=17)
    cfg = tiny_config(seed=9)
    a = run_fixed_round(ds, dom, cfg, k_rounds=3)
    b = run_fixed_round(ds, dom, cfg, k_rounds=3)
    assert json.dumps(a.trace.to_json_dict()) == json.dumps(b.trace.to_json_dict())


def test_multiset_reselection_allowed():
    # re-selected specs append separate measurements
    dom = categorical_domain([2, 2])
    ds = random_dataset(dom.cards, 500, seed=18)
    res = run_fixed_round(ds, dom, tiny_config(seed=10, rho_total=0.1, c=4.0), k_rounds=6)
    assert len(res.trace.measurements) == 6  # single candidate selected 6 times
    assert all(m.spec.attrs == (0, 1) for m in res.trace.measurements)
