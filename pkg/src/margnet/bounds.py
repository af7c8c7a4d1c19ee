"""Computable fitting-error bounds for a trained generator.

Three diagnostics:

* a deterministic lower bound on the total squared fitting error of the
  selected two-way marginals: a batch of b soft rows can only realize a
  rank-<=b joint table, so the tail singular values of each true marginal are
  unavoidable error;
* a probabilistic upper bound on the same quantity, built from an
  inverse-variance combination of the (possibly repeated) noisy measurements
  plus a chi-squared tail term;
* a probabilistic upper bound on the total L1 error of the *unselected*
  marginals, derived from the exponential mechanism's utility guarantee in the
  final selection round plus the model drift after it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

from .domain import Dataset
from .errors import InvalidDelta, NoRounds
from .generator import GeneratorModel, forward, soft_marginal
from .marginals import Marginal, all_pair_specs, compute_marginal, l1_distance, marginal_spec


def chi2_cdf(x: float, dof: int) -> float:
    """Chi-squared CDF via the regularized lower incomplete gamma."""
    if x <= 0:
        return 0.0
    return float(gammainc(dof / 2.0, x / 2.0))


def chi2_inverse_cdf(p: float, dof: int, tol: float = 1e-8) -> float:
    """Numeric inverse of the chi-squared CDF (bisection)."""
    if not 0 < p < 1:
        raise InvalidDelta(f"quantile level must be in (0, 1), got {p}")
    hi = float(max(dof, 1))
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol:
        mid = (lo + hi) / 2.0
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


@dataclass
class BoundEntry:
    attrs: tuple[int, ...]
    observed: float
    bound: float

    @property
    def slack(self) -> float:
        return self.bound - self.observed

    def to_json_dict(self) -> dict:
        return {"attrs": list(self.attrs), "observed": self.observed,
                "bound": self.bound, "slack": self.slack}


@dataclass
class BoundReport:
    entries: list[BoundEntry] = field(default_factory=list)
    deltas: list[float] = field(default_factory=list)

    @property
    def total_observed(self) -> float:
        return float(sum(e.observed for e in self.entries))

    @property
    def total_bound(self) -> float:
        return float(sum(e.bound for e in self.entries))

    @property
    def holds(self) -> bool:
        return self.total_observed <= self.total_bound

    def to_json_dict(self) -> dict:
        return {
            "per_marginal": [e.to_json_dict() for e in self.entries],
            "total_observed": self.total_observed,
            "total_bound": self.total_bound,
            "deltas": list(self.deltas),
        }


def selected_lower_bound(exact_marginals: list[Marginal], batch_size: int) -> float:
    """Deterministic floor on the selected-marginal squared error.

    Each two-way marginal is reshaped to its natural matrix; the sum of its
    squared singular values beyond index batch_size is unavoidable for any
    rank-<=batch_size estimate (best low-rank approximation error).
    """
    total = 0.0
    for m in exact_marginals:
        if m.spec.order != 2:
            continue
        mat = m.counts.reshape(m.spec.cards)
        svals = np.linalg.svd(mat, compute_uv=False)
        total += float((svals[batch_size:] ** 2).sum())
    return total


def combine_measurements(group: list) -> tuple[np.ndarray, float]:
    """Inverse-variance combination of repeated measurements of one spec.

    Weights w_j proportional to rho_m^j with sum 1 give the minimum-variance
    unbiased combination; its per-cell noise deviation is
    sigma_bar = sqrt(sum_j w_j^2 / (2 rho_m^j)) = 1/sqrt(2 sum_j rho_m^j).
    Returns (combined counts, sigma_bar).
    """
    rhos = np.array([m.rho_m for m in group], dtype=float)
    w = rhos / rhos.sum()
    counts = np.zeros_like(group[0].noisy.counts)
    for wj, m in zip(w, group):
        counts = counts + wj * m.noisy.counts
    sigma_bar = math.sqrt(float((w * w / (2.0 * rhos)).sum()))
    return counts, sigma_bar


def selected_upper_bound(measurements: list, model: GeneratorModel, scale: float,
                         deltas, exact: dict | None = None) -> BoundReport:
    """Confidence upper bound on the selected-marginal squared error.

    Per distinct measured spec i, with probability at least 1 - delta_i:
        ||M_i - M_hat_i||_F^2  <=  2 (||Mbar_i - M_hat_i||_F^2
                                      + sigma_bar_i^2 * chi2_inv(1 - delta_i, n_i)).
    `deltas` is either one float used for every spec or a list matching the
    distinct specs in first-measurement order. `exact` (spec attrs -> Marginal)
    fills the observed error column when the real data is available.
    """
    groups: dict = {}
    order = []
    for m in measurements:
        if m.spec.attrs not in groups:
            groups[m.spec.attrs] = []
            order.append(m.spec)
        groups[m.spec.attrs].append(m)
    if isinstance(deltas, (int, float)):
        deltas = [float(deltas)] * len(order)
    if len(deltas) != len(order):
        raise ValueError(f"need one delta per distinct spec ({len(order)}), got {len(deltas)}")
    for dl in deltas:
        if not 0 < dl < 1:
            raise InvalidDelta(f"delta must be in (0, 1), got {dl}")

    batch = forward(model)
    report = BoundReport(deltas=list(deltas))
    for spec, delta_i in zip(order, deltas):
        combined, sigma_bar = combine_measurements(groups[spec.attrs])
        est = soft_marginal(batch, spec, scale).counts
        fit_term = float(((combined - est) ** 2).sum())
        tail = sigma_bar ** 2 * chi2_inverse_cdf(1.0 - delta_i, spec.n_cells)
        bound = 2.0 * (fit_term + tail)
        observed = math.nan
        if exact is not None and spec.attrs in exact:
            diff = exact[spec.attrs].counts - est
            observed = float((diff * diff).sum())
        report.entries.append(BoundEntry(attrs=spec.attrs, observed=observed, bound=bound))
    return report


def unselected_bound(trace, model: GeneratorModel, prev_model: GeneratorModel,
                     ds: Dataset, scale: float, delta: float,
                     r_weights: dict | None = None,
                     max_cells: int = 10_000_000) -> BoundReport:
    """Confidence upper bound on the L1 error of each unmeasured marginal.

    For the final selection round K with chosen spec theta and budget rho_s_K,
    the exponential mechanism guarantees (w.p. >= 1 - delta per marginal):

        B_{i,K} = (r_t/r_i) * ||M_t - Mhat_t^{K-1}||_1
                  + (n_i r_i - n_t r_t) / (r_i sqrt(pi rho_s_K))
                  + Delta_q * log(|C|/delta) / (r_i sqrt(2 rho_s_K))

    and the reported per-spec bound is B_{i,K} plus the exactly computed model
    drift ||Mhat_i^{K-1} - Mhat_i||_1. Observed is ||M_i - Mhat_i||_1.
    """
    if not trace.rounds:
        raise NoRounds("the trace records no selection rounds")
    r_weights = r_weights or {}
    final = trace.rounds[-1]
    rho_s_k = final.rho_s
    theta = marginal_spec(ds, final.attrs)
    candidates = [s for s in all_pair_specs(ds.cards) if s.n_cells <= max_cells]
    n_candidates = len(candidates)
    measured = {tuple(r.attrs) for r in trace.rounds}
    delta_q = max(r_weights.get(s.attrs, 1.0) for s in candidates)

    batch_final = forward(model)
    batch_prev = forward(prev_model)
    r_t = r_weights.get(theta.attrs, 1.0)
    theta_err = l1_distance(soft_marginal(batch_prev, theta, scale), compute_marginal(ds, theta))

    report = BoundReport(deltas=[delta])
    for spec in candidates:
        if spec.attrs in measured:
            continue
        r_i = r_weights.get(spec.attrs, 1.0)
        b_ik = (
            (r_t / r_i) * theta_err
            + (spec.n_cells * r_i - theta.n_cells * r_t) / (r_i * math.sqrt(math.pi * rho_s_k))
            + delta_q * math.log(n_candidates / delta) / (r_i * math.sqrt(2.0 * rho_s_k))
        )
        drift = l1_distance(soft_marginal(batch_prev, spec, scale),
                            soft_marginal(batch_final, spec, scale))
        observed = l1_distance(soft_marginal(batch_final, spec, scale),
                               compute_marginal(ds, spec))
        report.entries.append(BoundEntry(attrs=spec.attrs, observed=observed, bound=b_ik + drift))
    return report
