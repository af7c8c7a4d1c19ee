"""End-to-end synthesis: budget split, one-way warm-up, adaptive two-way
selection under the privacy filter, weighted marginal training, and sampling.

The adaptive loop alternates exponential-mechanism selection (budget rho_s per
round) with Gaussian measurement (rho_m per round) and a training pass. Both
per-round budgets double when a first-time-selected marginal improves the
model by less than the expected noise level, and the last round absorbs
whatever budget remains. A fixed-round mode (no doubling, equal budget per
round) is available for ablation runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import Dataset, Domain
from .errors import InsufficientBudget
from .generator import (
    AdamState,
    GeneratorModel,
    adam_step,
    forward,
    init_generator,
    loss_and_grad,
    sample_hard,
    soft_marginal,
)
from .marginals import Marginal, MarginalSpec, all_pair_specs, compute_marginal, l1_distance, marginal_spec
from .privacy import Accountant, NoiseParams, exponential_mechanism, gaussian_mechanism

# Relative budget headroom left unspent so float rounding can never push the
# ledger total past the budget.
_BUDGET_SLACK = 1e-9


@dataclass
class SynthConfig:
    rho_total: float
    c: float | None = None  # selection-granularity parameter; defaults to 16*d
    r_weights: dict | None = None  # per-candidate score weights, default all 1.0
    train_iters: int = 200
    lr: float = 1e-3
    batch_size: int = 256
    hidden: tuple[int, ...] = (256, 256)
    latent_dim: int = 64
    mode: str = "adaptive"  # "adaptive" | "fixed_round"
    fixed_rounds: int = 30  # used only in fixed_round mode
    fixed_input: bool = True
    seed: int = 0
    max_cells: int = 10_000_000  # cap on candidate marginal size
    noise_free: bool = False  # test hook: skip measurement noise (not private)

    def resolved_c(self, d: int) -> float:
        c = 16.0 * d if self.c is None else float(self.c)
        if c < d:
            raise ValueError(f"c={c} must be at least d={d} so the warm-up is affordable")
        return c

    def to_json_dict(self, d: int) -> dict:
        return {
            "rho_total": self.rho_total,
            "c": self.resolved_c(d),
            "train_iters": self.train_iters,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "hidden": list(self.hidden),
            "latent_dim": self.latent_dim,
            "mode": self.mode,
            "fixed_rounds": self.fixed_rounds if self.mode == "fixed_round" else None,
            "fixed_input": self.fixed_input,
            "seed": self.seed,
            "noise_free": self.noise_free,
            "r_weights": None if not self.r_weights
            else sorted([list(k), v] for k, v in self.r_weights.items()),
        }


@dataclass
class Measurement:
    spec: MarginalSpec
    noisy: Marginal
    rho_m: float
    sigma: float
    weight: float = 1.0
    round: int = 0  # 0 = warm-up
    newly_selected: bool = False

    def to_json_dict(self) -> dict:
        return {
            "attrs": list(self.spec.attrs),
            "counts": [float(c) for c in self.noisy.counts],
            "rho_m": self.rho_m,
            "sigma": self.sigma,
            "round": self.round,
        }


@dataclass
class RoundRecord:
    round: int
    attrs: tuple[int, ...]
    rho_s: float
    rho_m: float
    score: float
    improvement: float
    noise_floor: float
    doubled: bool

    def to_json_dict(self) -> dict:
        return {
            "round": self.round,
            "attrs": list(self.attrs),
            "rho_s": self.rho_s,
            "rho_m": self.rho_m,
            "score": self.score,
            "improvement": self.improvement,
            "noise_floor": self.noise_floor,
            "doubled": self.doubled,
        }


@dataclass
class SelectionTrace:
    warmup: list[Measurement] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    measurements: list[Measurement] = field(default_factory=list)  # adaptive-phase only
    n_estimate: float = 0.0
    rho_budget: float = 0.0
    ledger: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "format": "margnet-trace-v1",
            "config": self.config,
            "seed": self.seed,
            "n_estimate": self.n_estimate,
            "rho_budget": self.rho_budget,
            "warmup": [m.to_json_dict() for m in self.warmup],
            "rounds": [r.to_json_dict() for r in self.rounds],
            "measurements": [m.to_json_dict() for m in self.measurements],
            "ledger": [[label, rho] for label, rho in self.ledger],
        }


def trace_from_json_dict(obj: dict, cards) -> SelectionTrace:
    """Rebuild a SelectionTrace (as far as diagnostics need it) from its JSON."""
    if obj.get("format") != "margnet-trace-v1":
        raise ValueError(f"not a synthesis trace: format={obj.get('format')!r}")

    def meas(entry: dict) -> Measurement:
        spec = marginal_spec(cards, entry["attrs"])
        return Measurement(spec=spec, noisy=Marginal(spec, np.asarray(entry["counts"])),
                           rho_m=entry["rho_m"], sigma=entry["sigma"], round=entry["round"])

    trace = SelectionTrace(
        warmup=[meas(e) for e in obj.get("warmup", [])],
        measurements=[meas(e) for e in obj.get("measurements", [])],
        n_estimate=obj["n_estimate"],
        rho_budget=obj.get("rho_budget", 0.0),
        ledger=[(label, rho) for label, rho in obj.get("ledger", [])],
        config=obj.get("config", {}),
        seed=obj.get("seed", 0),
    )
    for e in obj.get("rounds", []):
        trace.rounds.append(RoundRecord(
            round=e["round"], attrs=tuple(e["attrs"]), rho_s=e["rho_s"], rho_m=e["rho_m"],
            score=e["score"], improvement=e["improvement"],
            noise_floor=e.get("noise_floor", 0.0), doubled=e["doubled"],
        ))
    return trace


def split_budget(rho: float, c: float) -> tuple[float, float]:
    """Per-round (rho_s, rho_m) = (0.1, 0.9) * rho / c.

    rho_m is computed as the exact complement so rho_s + rho_m == rho / c.
    """
    if rho <= 0 or c <= 0:
        raise ValueError("rho and c must be positive")
    unit = rho / c
    rho_s = 0.1 * unit
    return rho_s, unit - rho_s


def _measure(counts: np.ndarray, rho_m: float, rng, noise_free: bool) -> np.ndarray:
    if noise_free:
        return np.asarray(counts, dtype=float).copy()
    return gaussian_mechanism(counts, rho_m, rng)


def compute_weights(measurements: list[Measurement], d: int) -> None:
    """Training weights: sqrt(rho_m) base, amplified d-fold for the newly
    selected measurement, then scaled so the maximum weight equals d."""
    if not measurements:
        raise ValueError("no measurements to weight")
    base = np.array([math.sqrt(m.rho_m) * (d if m.newly_selected else 1.0) for m in measurements])
    base *= d / base.max()
    for m, w in zip(measurements, base):
        m.weight = float(w)


def train(model: GeneratorModel, measurements: list[Measurement], scale: float,
          iters: int, lr: float, fixed_input: bool, rng: np.random.Generator) -> float:
    """Run `iters` gradient steps on the weighted marginal loss; returns the
    final loss. A fresh optimizer state is used for every training pass."""
    state = AdamState.for_model(model)
    loss = 0.0
    for _ in range(iters):
        z = None if fixed_input else rng.standard_normal(model.Z.shape)
        loss, grads = loss_and_grad(model, measurements, scale, z=z)
        adam_step(model, grads, state, lr)
    return loss


def candidate_scores(model: GeneratorModel, exact: dict, candidates: list[MarginalSpec],
                     rho_m: float, r_weights: dict, scale: float) -> np.ndarray:
    """Selection scores: expected estimation improvement minus expected noise.

    q_i = r_i * (||M_i(G) - M_i||_1 - n_i / sqrt(pi * rho_m)), with M_i(G) the
    model's soft marginal at the current scale and M_i the exact marginal.
    """
    batch = forward(model)
    scores = np.empty(len(candidates))
    for i, spec in enumerate(candidates):
        r_i = r_weights.get(spec.attrs, 1.0)
        est = soft_marginal(batch, spec, scale)
        gap = l1_distance(est, exact[spec.attrs])
        scores[i] = r_i * (gap - spec.n_cells / math.sqrt(math.pi * rho_m))
    return scores


def warmup(ds: Dataset, domain: Domain, model: GeneratorModel, acct: Accountant,
           rho_m: float, config: SynthConfig, rng_measure, rng_train) -> tuple[list[Measurement], float]:
    """Measure every one-way marginal, estimate the record count, fit the model.

    Returns (measurements, n_estimate). Charges d * rho_m to the accountant;
    raises InsufficientBudget up front if that does not fit.
    """
    d = domain.d
    if d * rho_m > acct.remaining + 1e-12:
        raise InsufficientBudget(
            f"warm-up needs {d * rho_m:.6g} but only {acct.remaining:.6g} remains"
        )
    sigma = NoiseParams(rho_m).sigma
    measurements = []
    for a in range(d):
        spec = marginal_spec(ds, (a,))
        noisy = _measure(compute_marginal(ds, spec).counts, rho_m, rng_measure, config.noise_free)
        acct.spend(rho_m, f"warmup:one-way:{a}")
        measurements.append(Measurement(spec=spec, noisy=Marginal(spec, noisy),
                                        rho_m=rho_m, sigma=sigma, round=0))
    n_estimate = max(1.0, float(np.median([m.noisy.counts.sum() for m in measurements])))
    compute_weights(measurements, d)
    train(model, measurements, n_estimate, config.train_iters, config.lr,
          config.fixed_input, rng_train)
    return measurements, n_estimate


def _round_budgets_exact(remaining: float) -> tuple[float, float]:
    # Final-round reallocation: shave a sliver so float rounding cannot
    # overspend, and make rho_m the exact complement.
    usable = remaining * (1.0 - _BUDGET_SLACK)
    rho_s = 0.1 * usable
    return rho_s, usable - rho_s


def adaptive_loop(ds: Dataset, domain: Domain, model: GeneratorModel,
                  measurements: list[Measurement], acct: Accountant, rho_total: float,
                  rho_s: float, rho_m: float, config: SynthConfig, scale: float,
                  rng_select, rng_measure, rng_train,
                  trace: SelectionTrace) -> GeneratorModel:
    """Select-measure-train until the phase budget rho_total is exhausted.

    Returns the model state before the final round (needed by the unselected-
    marginal diagnostics); `model` itself is trained in place.
    """
    d = domain.d
    candidates = [s for s in all_pair_specs(domain.cards) if s.n_cells <= config.max_cells]
    if not candidates:
        return model.copy()
    r_weights = config.r_weights or {}
    delta_q = max(r_weights.get(s.attrs, 1.0) for s in candidates)
    exact = {s.attrs: compute_marginal(ds, s) for s in candidates}
    selected_before: set = set()
    spent = 0.0
    tol = _BUDGET_SLACK * rho_total
    prev_model = model.copy()
    k = 0
    while spent < rho_total - tol:
        k += 1
        # safety clamp: never start a round the remaining budget cannot cover
        # (also leaves headroom absorbing float rounding in the running sums)
        if spent + rho_s + rho_m > rho_total * (1.0 - _BUDGET_SLACK):
            rho_s, rho_m = _round_budgets_exact(rho_total - spent)
        prev_model = model.copy()

        scores = candidate_scores(model, exact, candidates, rho_m, r_weights, scale)
        idx = exponential_mechanism(scores, delta_q, rho_s, rng_select)
        acct.spend(rho_s, f"select:round:{k}")
        chosen = candidates[idx]

        est_before = soft_marginal(forward(model), chosen, scale)
        noisy = _measure(exact[chosen.attrs].counts, rho_m, rng_measure, config.noise_free)
        acct.spend(rho_m, f"measure:round:{k}")
        for m in measurements:
            m.newly_selected = False
        measurements.append(Measurement(spec=chosen, noisy=Marginal(chosen, noisy),
                                        rho_m=rho_m, sigma=NoiseParams(rho_m).sigma,
                                        round=k, newly_selected=True))
        compute_weights(measurements, d)
        train(model, measurements, scale, config.train_iters, config.lr,
              config.fixed_input, rng_train)
        spent += rho_s + rho_m

        est_after = soft_marginal(forward(model), chosen, scale)
        improvement = l1_distance(est_after, est_before)
        noise_floor = chosen.n_cells / math.sqrt(math.pi * rho_m)
        doubled = False
        if improvement < noise_floor and chosen.attrs not in selected_before:
            rho_s *= 2.0
            rho_m *= 2.0
            doubled = True
        selected_before.add(chosen.attrs)
        trace.rounds.append(RoundRecord(
            round=k, attrs=chosen.attrs, rho_s=acct.ledger[-2][1], rho_m=acct.ledger[-1][1],
            score=float(scores[idx]), improvement=improvement,
            noise_floor=noise_floor, doubled=doubled,
        ))
        if spent + rho_s + rho_m >= rho_total:
            rho_s, rho_m = _round_budgets_exact(rho_total - spent)

    # closing pass over everything measured, always for the full iteration
    # count (training never early-stops)
    train(model, measurements, scale, config.train_iters, config.lr,
          config.fixed_input, rng_train)
    return prev_model


def fixed_round_loop(ds: Dataset, domain: Domain, model: GeneratorModel,
                     measurements: list[Measurement], acct: Accountant, rho_total: float,
                     config: SynthConfig, scale: float,
                     rng_select, rng_measure, rng_train,
                     trace: SelectionTrace) -> GeneratorModel:
    """Ablation mode: exactly K equal-budget rounds, no doubling, no early stop."""
    d = domain.d
    k_rounds = config.fixed_rounds
    if k_rounds < 1:
        raise ValueError("fixed_round mode needs at least one round")
    unit = rho_total * (1.0 - _BUDGET_SLACK) / k_rounds
    rho_s = 0.1 * unit
    rho_m = unit - rho_s
    candidates = [s for s in all_pair_specs(domain.cards) if s.n_cells <= config.max_cells]
    if not candidates:
        return model.copy()
    r_weights = config.r_weights or {}
    delta_q = max(r_weights.get(s.attrs, 1.0) for s in candidates)
    exact = {s.attrs: compute_marginal(ds, s) for s in candidates}
    prev_model = model.copy()
    for k in range(1, k_rounds + 1):
        prev_model = model.copy()
        scores = candidate_scores(model, exact, candidates, rho_m, r_weights, scale)
        idx = exponential_mechanism(scores, delta_q, rho_s, rng_select)
        acct.spend(rho_s, f"select:round:{k}")
        chosen = candidates[idx]
        est_before = soft_marginal(forward(model), chosen, scale)
        noisy = _measure(exact[chosen.attrs].counts, rho_m, rng_measure, config.noise_free)
        acct.spend(rho_m, f"measure:round:{k}")
        for m in measurements:
            m.newly_selected = False
        measurements.append(Measurement(spec=chosen, noisy=Marginal(chosen, noisy),
                                        rho_m=rho_m, sigma=NoiseParams(rho_m).sigma,
                                        round=k, newly_selected=True))
        compute_weights(measurements, d)
        train(model, measurements, scale, config.train_iters, config.lr,
              config.fixed_input, rng_train)
        improvement = l1_distance(soft_marginal(forward(model), chosen, scale), est_before)
        trace.rounds.append(RoundRecord(
            round=k, attrs=chosen.attrs, rho_s=rho_s, rho_m=rho_m,
            score=float(scores[idx]), improvement=improvement,
            noise_floor=chosen.n_cells / math.sqrt(math.pi * rho_m), doubled=False,
        ))
    train(model, measurements, scale, config.train_iters, config.lr,
          config.fixed_input, rng_train)
    return prev_model


@dataclass
class SynthResult:
    synth: Dataset
    trace: SelectionTrace
    model: GeneratorModel
    prev_model: GeneratorModel
    accountant: Accountant
    n_estimate: float
    wall_clock_seconds: float
    decode_seed: int


def run_margnet(ds: Dataset, domain: Domain, config: SynthConfig) -> SynthResult:
    """Full pipeline: split, warm-up, adaptive (or fixed-round) loop, sample."""
    t0 = time.perf_counter()
    d = domain.d
    c = config.resolved_c(d)
    rho = config.rho_total
    rho_s, rho_m = split_budget(rho, c)

    ss = np.random.SeedSequence(config.seed)
    kids = ss.spawn(5)
    rng_init_seed = int(kids[0].generate_state(1)[0])
    rng_measure = np.random.Generator(np.random.PCG64(kids[1]))
    rng_select = np.random.Generator(np.random.PCG64(kids[2]))
    rng_train = np.random.Generator(np.random.PCG64(kids[3]))
    tail = kids[4].generate_state(2)
    sample_seed, decode_seed = int(tail[0]), int(tail[1])

    acct = Accountant(rho_budget=rho)
    model = init_generator(domain, list(config.hidden), config.latent_dim,
                           config.batch_size, rng_init_seed)
    trace = SelectionTrace(rho_budget=rho, config=config.to_json_dict(d), seed=config.seed)

    measurements, n_estimate = warmup(ds, domain, model, acct, rho_m, config,
                                      rng_measure, rng_train)
    trace.warmup = list(measurements)
    trace.n_estimate = n_estimate

    rho_phase = acct.remaining  # rho - d * rho_m
    if config.mode == "adaptive":
        prev_model = adaptive_loop(ds, domain, model, measurements, acct, rho_phase,
                                   rho_s, rho_m, config, n_estimate,
                                   rng_select, rng_measure, rng_train, trace)
    elif config.mode == "fixed_round":
        prev_model = fixed_round_loop(ds, domain, model, measurements, acct, rho_phase,
                                      config, n_estimate,
                                      rng_select, rng_measure, rng_train, trace)
    else:
        raise ValueError(f"unknown mode {config.mode!r}")

    trace.measurements = [m for m in measurements if m.round > 0]
    trace.ledger = list(acct.ledger)

    n_rows = int(round(n_estimate))
    synth = sample_hard(model, n_rows, sample_seed)
    return SynthResult(
        synth=synth, trace=trace, model=model, prev_model=prev_model,
        accountant=acct, n_estimate=n_estimate,
        wall_clock_seconds=time.perf_counter() - t0, decode_seed=decode_seed,
    )


def run_fixed_round(ds: Dataset, domain: Domain, config: SynthConfig, k_rounds: int) -> SynthResult:
    """Convenience wrapper for the fixed-round ablation mode."""
    cfg = replace(config, mode="fixed_round", fixed_rounds=k_rounds)
    return run_margnet(ds, domain, cfg)
