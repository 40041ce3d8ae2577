"""Probability model for pending toxicity outcomes.

Time to DLT is piecewise uniform over K sub-intervals of the assessment
window, with sub-interval weights shared across doses.  Combined with the
per-dose DLT probabilities this gives a survival likelihood for censored
follow-up, a Metropolis-within-Gibbs sampler for the joint posterior, the
conditional DLT probability of each pending patient, the Poisson-binomial
posterior of the pending DLT count, and finally the posterior distribution
over dose-assignment decisions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Decision, OutcomeStatus, TrialState

_P_CLAMP = 1e-15


@dataclass(frozen=True)
class TimeGrid:
    """Boundaries 0 = h_0 < h_1 < ... < h_K = tau of the assessment window."""

    boundaries: tuple[float, ...]

    def __post_init__(self) -> None:
        b = self.boundaries
        if len(b) < 2 or b[0] != 0.0:
            raise ValueError("grid must start at 0 and contain at least one bin")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValueError("grid boundaries must be strictly increasing")

    @classmethod
    def equal_bins(cls, tau: float, k: int) -> "TimeGrid":
        return cls(tuple(i * tau / k for i in range(k + 1)))

    @property
    def tau(self) -> float:
        return self.boundaries[-1]

    @property
    def k(self) -> int:
        return len(self.boundaries) - 1

    def bin_of(self, t: float) -> int:
        """1-based index of the sub-interval (h_{k-1}, h_k] containing t > 0."""
        for k in range(1, self.k + 1):
            if t <= self.boundaries[k]:
                return k
        return self.k


def beta_fraction(t: float, k: int, grid: TimeGrid) -> float:
    """Fraction of sub-interval k's mass accumulated by time t: 0 before the
    bin, linear inside it, 1 past it."""
    if not 0.0 <= t <= grid.tau:
        raise ValueError(f"t={t} outside [0, tau={grid.tau}]")
    if not 1 <= k <= grid.k:
        raise ValueError(f"bin index {k} out of range 1..{grid.k}")
    lo, hi = grid.boundaries[k - 1], grid.boundaries[k]
    if t > hi:
        return 1.0
    if t > lo:
        return (t - lo) / (hi - lo)
    return 0.0


@dataclass(frozen=True)
class ToxData:
    """Per-dose tallies plus everything the likelihood needs: DLT counts per
    time bin (pooled across doses) and pending follow-up times per dose."""

    n: tuple[int, ...]
    m: tuple[int, ...]
    bin_counts: tuple[int, ...]
    pending: tuple[tuple[float, ...], ...]
    grid: TimeGrid

    @property
    def n_doses(self) -> int:
        return len(self.n)

    @property
    def n_patients(self) -> int:
        return sum(self.n) + sum(self.m) + sum(len(p) for p in self.pending)

    @classmethod
    def from_state(cls, state: TrialState) -> "ToxData":
        params = state.params
        grid = TimeGrid.equal_bins(params.tau, params.k)
        n = [0] * params.n_doses
        m = [0] * params.n_doses
        bins = [0] * params.k
        pend: list[list[float]] = [[] for _ in range(params.n_doses)]
        for p in state.patients:
            d = p.dose - 1
            if p.status is OutcomeStatus.DLT:
                n[d] += 1
                bins[grid.bin_of(p.dlt_time) - 1] += 1
            elif p.status is OutcomeStatus.NO_DLT:
                m[d] += 1
            else:
                pend[d].append(p.follow_up(state.clock, params.tau))
        return cls(
            tuple(n), tuple(m), tuple(bins), tuple(tuple(v) for v in pend), grid
        )

    @classmethod
    def from_counts(
        cls,
        n: int,
        m: int,
        dlt_times: Sequence[float],
        follow_ups: Sequence[float],
        grid: TimeGrid,
    ) -> "ToxData":
        """Single-dose view, e.g. for one-shot what-if evaluation."""
        if len(dlt_times) != n:
            raise ValueError("need one DLT time per observed DLT")
        bins = [0] * grid.k
        for t in dlt_times:
            bins[grid.bin_of(t) - 1] += 1
        return cls((n,), (m,), tuple(bins), (tuple(follow_ups),), grid)


def _beta_rows(follow_ups: Sequence[float], grid: TimeGrid) -> list[tuple[float, ...]]:
    return [
        tuple(beta_fraction(v, k, grid) for k in range(1, grid.k + 1))
        for v in follow_ups
    ]


def log_likelihood(p: Sequence[float], w: Sequence[float], data: ToxData) -> float:
    """Log of the survival likelihood: observed DLTs contribute their time-bin
    weight and p_d, observed non-DLTs contribute 1 - p_d, and each pending
    patient contributes 1 - p_d * sum_k w_k beta(v_i, k)."""
    if len(p) != data.n_doses or len(w) != data.grid.k:
        raise ValueError("parameter dimensions do not match the data")
    total = 0.0
    for k, count in enumerate(data.bin_counts):
        if count:
            total += count * math.log(w[k])
    for d in range(data.n_doses):
        pd = p[d]
        if not 0.0 < pd < 1.0:
            raise ValueError("each p_d must lie in (0, 1)")
        if data.n[d]:
            total += data.n[d] * math.log(pd)
        if data.m[d]:
            total += data.m[d] * math.log1p(-pd)
        for row in _beta_rows(data.pending[d], data.grid):
            c = sum(wk * bk for wk, bk in zip(w, row))
            factor = 1.0 - pd * c
            if factor <= 0.0:
                raise ValueError("pending survival factor underflowed to <= 0")
            total += math.log(factor)
    return total


def log_likelihood_grad(
    p: Sequence[float], w_logits: Sequence[float], data: ToxData
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the log likelihood wrt (logit p_d, softmax logits of w).

    Diagnostic only: the sampler is gradient-free, but this pins down the
    likelihood implementation against finite differences.
    """
    y = np.asarray(w_logits, dtype=float)
    ey = np.exp(y - y.max())
    w = ey / ey.sum()
    grad_p = np.zeros(data.n_doses)
    grad_w = np.zeros(data.grid.k)
    for k, count in enumerate(data.bin_counts):
        if count:
            grad_w[k] += count / w[k]
    for d in range(data.n_doses):
        pd = p[d]
        g = data.n[d] / pd - data.m[d] / (1.0 - pd)
        for row in _beta_rows(data.pending[d], data.grid):
            c = float(np.dot(w, row))
            denom = 1.0 - pd * c
            g -= c / denom
            grad_w -= pd * np.asarray(row) / denom
        grad_p[d] = g * pd * (1.0 - pd)
    grad_y = w * (grad_w - float(np.dot(w, grad_w)))
    return grad_p, grad_y


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Post-burn-in MCMC samples: p has shape (draws, D), w (draws, K)."""

    p: np.ndarray
    w: np.ndarray
    meta: dict

    @property
    def n_draws(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class MCMCConfig:
    n_iter: int = 3000
    burn_in: int = 1000
    seed: int | tuple[int, ...] = 0
    thin: int = 1
    step_p: float = 0.6
    step_w: float = 0.4
    adapt: bool = True

    def __post_init__(self) -> None:
        if self.n_iter < 1 or self.burn_in < 0 or self.n_iter <= self.burn_in:
            raise ValueError("need n_iter > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


def _expit(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sample_posterior(
    data: ToxData,
    theta: Sequence[tuple[float, float]],
    eta: Sequence[float],
    config: MCMCConfig,
) -> PosteriorDraws:
    """Metropolis-within-Gibbs sampler for (p_1..p_D, w_1..w_K).

    Each p_d moves by a Gaussian random walk on the logit scale; w moves
    jointly by a random walk on the additive-log-ratio transform.  Proposal
    scales adapt during burn-in toward a 25-45% acceptance rate.  Deterministic
    given the seed.
    """
    if data.n_patients < 1:
        raise ValueError("need at least one enrolled patient")
    if len(theta) != data.n_doses or len(eta) != data.grid.k:
        raise ValueError("prior dimensions do not match the data")
    D, K = data.n_doses, data.grid.k
    rng = np.random.default_rng(config.seed)
    n_iter, burn_in, thin = config.n_iter, config.burn_in, config.thin

    beta_rows = [_beta_rows(data.pending[d], data.grid) for d in range(D)]
    # exponents on the transformed scales: priors plus change-of-variable
    # Jacobians fold into (n_d + theta_a) log p + (m_d + theta_b) log(1 - p)
    # and (bin_k + eta_k) log w_k
    a_exp = [data.n[d] + theta[d][0] for d in range(D)]
    b_exp = [data.m[d] + theta[d][1] for d in range(D)]
    w_exp = [data.bin_counts[k] + eta[k] for k in range(K)]

    def dose_term(d: int, pd: float, c_list: list[float]) -> float:
        t = a_exp[d] * math.log(pd) + b_exp[d] * math.log1p(-pd)
        for c in c_list:
            t += math.log1p(-pd * c)
        return t

    def mix_w(wv: list[float]) -> tuple[list[list[float]], float]:
        c_all = [
            [sum(wk * bk for wk, bk in zip(wv, row)) for row in beta_rows[d]]
            for d in range(D)
        ]
        term = sum(w_exp[k] * math.log(wv[k]) for k in range(K))
        return c_all, term

    p = [
        min(1.0 - _P_CLAMP, max(_P_CLAMP, (data.n[d] + 0.5) / (data.n[d] + data.m[d] + 1.0)))
        for d in range(D)
    ]
    x = [math.log(pd / (1.0 - pd)) for pd in p]
    eta_total = sum(eta)
    w = [e / eta_total for e in eta]
    y = [math.log(w[k] / w[K - 1]) for k in range(K - 1)]

    c_cur, w_term = mix_w(w)
    p_terms = [dose_term(d, p[d], c_cur[d]) for d in range(D)]
    if not all(math.isfinite(t) for t in p_terms) or not math.isfinite(w_term):
        raise ValueError("non-finite log-likelihood at initialization")

    step_p = [config.step_p] * D
    step_w = config.step_w
    walk_w = K > 1

    n_keep = (n_iter - burn_in + thin - 1) // thin
    out_p = np.empty((n_keep, D))
    out_w = np.empty((n_keep, K))
    normals = rng.standard_normal((n_iter, D + max(K - 1, 1)))
    log_u = np.log(rng.random((n_iter, D + 1)))
    accept_p = [0] * D
    accept_w = 0
    window_p = [0] * D
    window_w = 0
    kept = 0
    adapt_every = 50

    for it in range(n_iter):
        zrow = normals[it]
        urow = log_u[it]
        for d in range(D):
            x_new = x[d] + step_p[d] * zrow[d]
            p_new = _expit(x_new)
            if p_new < _P_CLAMP:
                p_new = _P_CLAMP
            elif p_new > 1.0 - _P_CLAMP:
                p_new = 1.0 - _P_CLAMP
            try:
                t_new = dose_term(d, p_new, c_cur[d])
            except ValueError:
                continue
            if t_new - p_terms[d] >= urow[d]:
                x[d], p[d], p_terms[d] = x_new, p_new, t_new
                accept_p[d] += 1
                window_p[d] += 1
        if walk_w:
            y_new = [y[j] + step_w * zrow[D + j] for j in range(K - 1)]
            top = max(max(y_new), 0.0)
            exps = [math.exp(v - top) for v in y_new] + [math.exp(-top)]
            s = sum(exps)
            w_new = [v / s for v in exps]
            if min(w_new) > 0.0:
                c_new, w_term_new = mix_w(w_new)
                delta = w_term_new - w_term
                ok = True
                pend_new = [0.0] * D
                pend_old = [0.0] * D
                for d in range(D):
                    if not beta_rows[d]:
                        continue
                    pd = p[d]
                    tn = to = 0.0
                    for c in c_new[d]:
                        f = 1.0 - pd * c
                        if f <= 0.0:
                            ok = False
                            break
                        tn += math.log1p(-pd * c)
                    if not ok:
                        break
                    for c in c_cur[d]:
                        to += math.log1p(-pd * c)
                    pend_new[d], pend_old[d] = tn, to
                    delta += tn - to
                if ok and delta >= urow[D]:
                    y, w, c_cur, w_term = y_new, w_new, c_new, w_term_new
                    for d in range(D):
                        if beta_rows[d]:
                            p_terms[d] += pend_new[d] - pend_old[d]
                    accept_w += 1
                    window_w += 1
        if config.adapt and it < burn_in and (it + 1) % adapt_every == 0:
            for d in range(D):
                rate = window_p[d] / adapt_every
                if rate > 0.45:
                    step_p[d] *= 1.25
                elif rate < 0.25:
                    step_p[d] *= 0.8
                window_p[d] = 0
            if walk_w:
                rate = window_w / adapt_every
                if rate > 0.45:
                    step_w *= 1.25
                elif rate < 0.25:
                    step_w *= 0.8
                window_w = 0
        if it >= burn_in and (it - burn_in) % thin == 0:
            out_p[kept] = p
            out_w[kept] = w
            kept += 1

    meta = {
        "n_iter": n_iter,
        "burn_in": burn_in,
        "thin": thin,
        "seed": config.seed,
        "accept_rate_p": [a / n_iter for a in accept_p],
        "accept_rate_w": accept_w / n_iter if walk_w else None,
        "step_p": step_p,
        "step_w": step_w,
    }
    return PosteriorDraws(out_p[:kept], out_w[:kept], meta)


def conditional_dlt_prob(
    v: float, p_d: float, w: Sequence[float], grid: TimeGrid
) -> float:
    """Probability that a patient followed v days without DLT still ends up
    with one inside the window."""
    if not 0.0 <= v < grid.tau:
        raise ValueError(f"follow-up v={v} outside [0, tau)")
    surv = 1.0 - sum(
        wk * beta_fraction(v, k, grid) for k, wk in enumerate(w, start=1)
    )
    num = surv * p_d
    return num / (num + (1.0 - p_d))


def poisson_binomial_pmf(q: Sequence[float]) -> np.ndarray:
    """Exact pmf of a sum of independent Bernoulli(q_i), by folding each
    success probability into the running pmf."""
    pmf = np.zeros(len(q) + 1)
    pmf[0] = 1.0
    for i, qi in enumerate(q):
        if not 0.0 <= qi <= 1.0:
            raise ValueError("success probabilities must lie in [0, 1]")
        head = pmf[: i + 1].copy()
        pmf[: i + 1] *= 1.0 - qi
        pmf[1 : i + 2] += head * qi
    return pmf


@dataclass(frozen=True)
class SPosterior:
    """Posterior pmf of the number of DLTs among the pending patients."""

    pmf: tuple[float, ...]

    @property
    def r(self) -> int:
        return len(self.pmf) - 1


def s_posterior(
    draws: PosteriorDraws,
    dose: int,
    follow_ups: Sequence[float],
    grid: TimeGrid,
    method: str = "plugin",
) -> SPosterior:
    """Posterior pmf of the pending DLT count at one dose.

    ``plugin`` (default) evaluates the conditional DLT probabilities at the
    posterior means of (p_dose, w) and takes a single Poisson-binomial — this
    is what reproduces the published worked examples.  ``mixture`` averages
    the Poisson-binomial pmf over the draws, i.e. integrates the pmf against
    the posterior; it is the fully Bayesian estimator and spreads a little
    more mass onto the extreme counts.
    """
    if draws.n_draws < 1:
        raise ValueError("no posterior draws")
    r = len(follow_ups)
    if r == 0:
        return SPosterior((1.0,))
    if any(not 0.0 <= v < grid.tau for v in follow_ups):
        raise ValueError("follow-ups must lie in [0, tau)")
    B = np.array(_beta_rows(follow_ups, grid))  # (r, K)
    if method == "plugin":
        pd = float(draws.p[:, dose - 1].mean())
        w_bar = draws.w.mean(axis=0)
        surv = 1.0 - B @ w_bar
        q = surv * pd / (surv * pd + (1.0 - pd))
        pmf = poisson_binomial_pmf(q)
        return SPosterior(tuple(pmf / pmf.sum()))
    if method != "mixture":
        raise ValueError(f"unknown method {method!r}")
    surv = 1.0 - draws.w @ B.T  # (M, r)
    pd = draws.p[:, dose - 1][:, None]
    q = surv * pd / (surv * pd + (1.0 - pd))
    M = draws.n_draws
    pmf = np.zeros((M, r + 1))
    pmf[:, 0] = 1.0
    for i in range(r):
        qi = q[:, i][:, None]
        head = pmf[:, : i + 1].copy()
        pmf[:, : i + 1] *= 1.0 - qi
        pmf[:, 1 : i + 2] += head * qi
    mean = pmf.mean(axis=0)
    mean /= mean.sum()
    return SPosterior(tuple(mean))


@dataclass(frozen=True)
class DecisionDistribution:
    """The PoD triple: posterior probability of each decision, the optimal
    (most conservative top) decision, and the per-s decision map behind it."""

    gamma: dict
    a_star: Decision
    s_decisions: tuple[Decision, ...]

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.gamma[-1], self.gamma[0], self.gamma[1])


def pod(
    s_post: SPosterior,
    n: int,
    m: int,
    r: int,
    decide_fn: Callable[[int, int], Decision],
) -> DecisionDistribution:
    """Posterior probability of each decision: gamma_a sums Pr(S = s) over the
    s whose completed-data tally maps to decision a.

    When some other decision carries posterior mass, the top gamma is capped
    one ulp below 1 so that a threshold of exactly 1 is a structural
    guarantee: it passes only when every achievable pending resolution agrees.
    """
    if len(s_post.pmf) != r + 1:
        raise ValueError("pmf must cover s = 0..r")
    raw = {-1: 0.0, 0: 0.0, 1: 0.0}
    s_decisions = []
    for s, mass in enumerate(s_post.pmf):
        d = decide_fn(n + s, m + r - s)
        if d not in (-1, 0, 1):
            raise ValueError(f"decision function returned {d!r}")
        s_decisions.append(Decision(d))
        raw[int(d)] += mass
    total = raw[-1] + raw[0] + raw[1]
    if total <= 0.0:
        raise ValueError("decision distribution has no mass")
    gamma = {a: raw[a] / total for a in (-1, 0, 1)}
    populated = [a for a in (-1, 0, 1) if raw[a] > 0.0]
    if len(populated) > 1:
        cap = math.nextafter(1.0, 0.0)
        gamma = {a: min(g, cap) for a, g in gamma.items()}
    top = max(gamma.values())
    ties = [a for a in (-1, 0, 1) if gamma[a] >= top - 1e-12]
    return DecisionDistribution(gamma, Decision(min(ties)), tuple(s_decisions))
