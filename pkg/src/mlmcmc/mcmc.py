"""Metropolis-Hastings and multilevel MCMC with subsampled coarse chains.

All chains target a posterior with a standard normal prior on the
coefficient vector.  Random streams are Philox generators keyed by
``SeedSequence(seed, spawn_key=(replica, level))``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np


class ChainExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProposalConfig:
    kind: str = "pcn"
    beta: float = 0.1

    def __post_init__(self):
        if self.kind not in ("pcn", "random-walk"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if self.beta < 0 or (self.kind == "pcn" and self.beta > 1):
            raise ValueError(f"invalid step size beta={self.beta} for {self.kind}")


def chain_rng(seed: int, replica: int = 0, level: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(replica, level))))


def propose(config: ProposalConfig, current: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    psi = rng.standard_normal(np.shape(current))
    if config.kind == "pcn":
        return np.sqrt(1 - config.beta**2) * current + config.beta * psi
    return current + config.beta * psi


def _prior_term(config, x):
    # the Gaussian prior cancels against the pCN proposal ratio
    return 0.0 if config.kind == "pcn" else -0.5 * float(x @ x)


def _accept(log_alpha, rng):
    u = rng.random()
    return log_alpha >= 0 or np.log(u) < log_alpha


@dataclass
class ChainRecord:
    level: int
    accepted: np.ndarray
    log_like_fine: np.ndarray
    log_like_coarse: np.ndarray
    qoi: np.ndarray
    qoi_coarse: np.ndarray
    burn_in: int = 0
    states: np.ndarray | None = None  # states after steps stride, 2*stride, ...
    stride: int = 1
    seed: int = 0
    replica: int = 0
    seconds: float = 0.0
    initial_log_like: float = np.nan
    field_mean: np.ndarray | None = field(default=None, repr=False)
    field_std: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.accepted)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))

    @property
    def rejection_rate(self) -> float:
        return 1.0 - self.acceptance_rate

    @property
    def corrections(self) -> np.ndarray:
        """Y samples: Q_l(E_l) - Q_{l-1}(paired coarse state); plain Q at level 0."""
        return self.qoi - self.qoi_coarse

    def post_burn(self) -> np.ndarray:
        return self.corrections[self.burn_in:]


def _evaluate(fn, x):
    out = fn(x)
    if isinstance(out, tuple):
        return float(out[0]), float(out[1])
    return float(out), np.nan


def mh_run(log_like, config: ProposalConfig, n_steps: int, seed=0, x0=None, dim=None,
           burn_in: int = 0, store_stride: int = 0, replica: int = 0, level: int = 0,
           log_prior="gaussian", rng=None) -> ChainRecord:
    """Single-level Metropolis-Hastings chain.

    ``log_like(x)`` returns the log-likelihood, or a pair (log-likelihood, QoI).
    With ``log_prior="gaussian"`` the target is likelihood times a standard
    normal prior; ``log_prior=None`` gives a flat prior (random walk only).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if x0 is None:
        if dim is None:
            raise ValueError("x0 or dim required")
        x0 = np.zeros(dim)
    x = np.array(x0, dtype=float)
    rng = rng or chain_rng(seed, replica, level)
    prior = (lambda z: _prior_term(config, z)) if log_prior == "gaussian" else (lambda z: 0.0)
    if log_prior is None and config.kind == "pcn":
        raise ValueError("pCN requires the Gaussian prior")
    ll, q = _evaluate(log_like, x)
    if not np.isfinite(ll):
        raise ValueError("log-likelihood is not finite at the initial state")
    lp = ll + prior(x)
    acc = np.zeros(n_steps, dtype=bool)
    lls, qs = np.empty(n_steps), np.empty(n_steps)
    states = [] if store_stride else None
    for t in range(n_steps):
        y = propose(config, x, rng)
        ll_y, q_y = _evaluate(log_like, y)
        lp_y = ll_y + prior(y)
        if np.isfinite(ll_y) and _accept(lp_y - lp, rng):
            x, ll, q, lp = y, ll_y, q_y, lp_y
            acc[t] = True
        lls[t], qs[t] = ll, q
        if store_stride and (t + 1) % store_stride == 0:
            states.append(x.copy())
    return ChainRecord(level, acc, lls, np.zeros(n_steps), qs, np.zeros(n_steps), burn_in,
                       None if states is None else np.array(states).reshape(-1, len(x)),
                       store_stride or 1, seed, replica)


@dataclass(frozen=True)
class LevelSpec:
    m: int  # number of coefficients at this level
    n_samples: int
    tau: int = 1
    burn_in: int = 0
    proposal: ProposalConfig = ProposalConfig()

    @property
    def n_steps(self) -> int:
        return self.n_samples + self.burn_in


class _Welford:
    def __init__(self, n):
        self.k, self.mean, self.m2 = 0, np.zeros(n), np.zeros(n)

    def push(self, v):
        self.k += 1
        d = v - self.mean
        self.mean += d / self.k
        self.m2 += d * (v - self.mean)

    def std(self):
        return np.sqrt(self.m2 / max(self.k - 1, 1))


def _coarse_pass(model, spec, nxt, seed, replica, field_stats):
    """Level-0 chain, storing states at the subsampling stride of the next level."""
    stride = nxt.tau if nxt else 0
    rng = chain_rng(seed, replica, 0)
    x = np.zeros(spec.m)
    ll, q, E = model(x)
    ll0 = ll
    T = spec.n_steps
    acc = np.zeros(T, dtype=bool)
    lls, qs = np.empty(T), np.empty(T)
    states = np.empty((T // stride if stride else 0, spec.m))
    stats = _Welford(E.size) if field_stats else None
    for t in range(T):
        y = propose(spec.proposal, x, rng)
        ll_y, q_y, E_y = model(y)
        d = ll_y - ll + _prior_term(spec.proposal, y) - _prior_term(spec.proposal, x)
        if np.isfinite(ll_y) and _accept(d, rng):
            x, ll, q, E = y, ll_y, q_y, E_y
            acc[t] = True
        lls[t], qs[t] = ll, q
        if stride and (t + 1) % stride == 0:
            states[(t + 1) // stride - 1] = x
        if stats is not None and t >= spec.burn_in:
            stats.push(E)
    rec = ChainRecord(0, acc, lls, np.zeros(T), qs, np.zeros(T), spec.burn_in, states, stride or 1, seed, replica,
                      initial_log_like=ll0)
    if stats is not None:
        rec.field_mean, rec.field_std = stats.mean, stats.std()
    return rec


def _fine_pass(level, model, spec, nxt, coarse: ChainRecord, m_coarse, seed, replica, field_stats):
    T = spec.n_steps
    if coarse.states is None or len(coarse.states) < T or coarse.stride != spec.tau:
        avail = 0 if coarse.states is None else len(coarse.states)
        raise ChainExhaustedError(
            f"level {level} needs {T} subsampled states at stride {spec.tau} "
            f"but level {level - 1} supplies {avail}; lengthen the coarser chain"
        )
    stride = nxt.tau if nxt else 0
    rng = chain_rng(seed, replica, level)
    x = np.zeros(spec.m)
    ll, q, E = model(x)
    # the zero coarse part is the coarse chain's initial state
    ll_c = coarse.initial_log_like
    ll0 = ll
    T_idx = np.arange(1, T + 1) * spec.tau - 1
    cand_ll = coarse.log_like_fine[T_idx]
    cand_q = coarse.qoi[T_idx]
    acc = np.zeros(T, dtype=bool)
    lls, llc = np.empty(T), np.empty(T)
    qs = np.empty(T)
    states = np.empty((T // stride if stride else 0, spec.m))
    stats = _Welford(E.size) if field_stats else None
    prop = spec.proposal
    for t in range(T):
        f_new = propose(prop, x[m_coarse:], rng)
        y = np.concatenate([coarse.states[t], f_new])
        ll_y, q_y, E_y = model(y)
        d = (ll_y - ll) + (ll_c - cand_ll[t]) + _prior_term(prop, f_new) - _prior_term(prop, x[m_coarse:])
        if np.isfinite(ll_y) and _accept(d, rng):
            x, ll, q, E, ll_c = y, ll_y, q_y, E_y, cand_ll[t]
            acc[t] = True
        lls[t], llc[t], qs[t] = ll, ll_c, q
        if stride and (t + 1) % stride == 0:
            states[(t + 1) // stride - 1] = x
        if stats is not None and t >= spec.burn_in:
            stats.push(E)
    rec = ChainRecord(level, acc, lls, llc, qs, cand_q.copy(), spec.burn_in, states, stride or 1, seed, replica,
                      initial_log_like=ll0)
    if stats is not None:
        rec.field_mean, rec.field_std = stats.mean, stats.std()
    return rec


def mlmcmc_run(models, hierarchy: list[LevelSpec], seed: int = 0, replica: int = 0,
               field_stats: bool = False) -> list[ChainRecord]:
    """Run the multilevel sampler sequentially from the coarsest level.

    ``models[l](xi)`` returns (log-likelihood, QoI, stiffness field) for a
    coefficient vector of length ``hierarchy[l].m``.
    """
    if len(models) != len(hierarchy):
        raise ValueError("one model per level required")
    for l in range(1, len(hierarchy)):
        if hierarchy[l].m <= hierarchy[l - 1].m:
            raise ValueError("truncations must increase strictly with level")
        if hierarchy[l].n_steps * hierarchy[l].tau > hierarchy[l - 1].n_steps:
            raise ChainExhaustedError(
                f"level {l} requires {hierarchy[l].n_steps * hierarchy[l].tau} coarse steps, "
                f"level {l - 1} runs only {hierarchy[l - 1].n_steps}"
            )
    records = []
    for l, (model, spec) in enumerate(zip(models, hierarchy)):
        nxt = hierarchy[l + 1] if l + 1 < len(hierarchy) else None
        stats = field_stats and nxt is None
        t0 = time.perf_counter()
        if l == 0:
            rec = _coarse_pass(model, spec, nxt, seed, replica, stats)
        else:
            rec = _fine_pass(l, model, spec, nxt, records[-1], hierarchy[l - 1].m, seed, replica, stats)
        rec.seconds = time.perf_counter() - t0
        records.append(rec)
    return records


def telescoping_estimate(chains: list[ChainRecord], burn_ins=None) -> float:
    """Level-0 posterior mean plus the mean correction of every finer level."""
    total = 0.0
    for l, c in enumerate(chains):
        b = c.burn_in if burn_ins is None else burn_ins[l]
        y = c.corrections[b:]
        if len(y) == 0:
            raise ValueError(f"level {l} has no samples after burn-in")
        total += float(np.mean(y))
    return total
