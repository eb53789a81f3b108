"""No-U-turn Hamiltonian Monte Carlo with warmup adaptation.

Multinomial trajectory sampling with the generalized U-turn criterion
(including the checks across merged subtrees), a diagonal inverse metric
estimated in expanding warmup windows, and dual-averaging step-size
adaptation. Adaptation is frozen after warmup.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0


class ChainFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 4
    warmup_iterations: int = 1000
    sampling_iterations: int = 3000
    master_seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    max_divergence_fraction: float = 0.1

    def __post_init__(self):
        if self.n_chains < 2:
            raise ValueError("at least 2 chains are required")
        if self.warmup_iterations < 1 or self.sampling_iterations < 1:
            raise ValueError("iteration counts must be >= 1")

    def chain_seeds(self):
        return np.random.SeedSequence(int(self.master_seed)).spawn(self.n_chains)


@dataclass
class ChainResult:
    draws: np.ndarray        # (iterations, dim), unconstrained
    accept_stat: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    step_size: float
    inv_mass: np.ndarray


class _State:
    __slots__ = ("theta", "p", "grad", "lp", "p_sharp")

    def __init__(self, theta, p, grad, lp, inv_mass):
        self.theta, self.p, self.grad, self.lp = theta, p, grad, lp
        self.p_sharp = inv_mass * p


class _Tree:
    __slots__ = ("first", "last", "proposal", "log_weight", "rho", "valid",
                 "sum_accept", "n_leapfrog", "diverging")


def _no_uturn(p_sharp_a, p_sharp_b, rho):
    return p_sharp_a @ rho > 0 and p_sharp_b @ rho > 0


class NUTS:
    def __init__(self, log_density_and_grad, dim, rng, target_accept=0.8, max_tree_depth=10):
        self.f = log_density_and_grad
        self.dim = dim
        self.rng = rng
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.inv_mass = np.ones(dim)
        self.step_size = 1.0

    def _eval(self, theta):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            try:
                lp, grad = self.f(theta)
            except (ArithmeticError, ValueError):
                return -math.inf, np.zeros(self.dim)
        if not (math.isfinite(lp) and np.all(np.isfinite(grad))):
            return -math.inf, np.zeros(self.dim)
        return lp, grad

    def _hamiltonian(self, lp, p):
        return -lp + 0.5 * float(p @ (self.inv_mass * p))

    def _leapfrog(self, s, eps):
        p = s.p + 0.5 * eps * s.grad
        theta = s.theta + eps * self.inv_mass * p
        lp, grad = self._eval(theta)
        p = p + 0.5 * eps * grad
        return _State(theta, p, grad, lp, self.inv_mass)

    def _build(self, s, depth, eps, H0):
        if depth == 0:
            new = self._leapfrog(s, eps)
            h = self._hamiltonian(new.lp, new.p) if math.isfinite(new.lp) else math.inf
            if math.isnan(h):
                h = math.inf
            t = _Tree()
            t.first = t.last = t.proposal = new
            t.diverging = h - H0 > MAX_DELTA_H
            t.valid = not t.diverging
            t.log_weight = H0 - h
            t.rho = new.p.copy()
            t.sum_accept = 1.0 if H0 - h > 0 else math.exp(H0 - h)
            t.n_leapfrog = 1
            return t
        init = self._build(s, depth - 1, eps, H0)
        if not init.valid:
            return init
        final = self._build(init.last, depth - 1, eps, H0)
        t = _Tree()
        t.first, t.last = init.first, final.last
        t.sum_accept = init.sum_accept + final.sum_accept
        t.n_leapfrog = init.n_leapfrog + final.n_leapfrog
        t.diverging = final.diverging
        if not final.valid:
            t.valid = False
            t.proposal, t.log_weight, t.rho = init.proposal, init.log_weight, init.rho
            return t
        t.log_weight = np.logaddexp(init.log_weight, final.log_weight)
        if final.log_weight > t.log_weight or self.rng.uniform() < math.exp(final.log_weight - t.log_weight):
            t.proposal = final.proposal
        else:
            t.proposal = init.proposal
        t.rho = init.rho + final.rho
        t.valid = (_no_uturn(init.first.p_sharp, final.last.p_sharp, t.rho)
                   and _no_uturn(init.first.p_sharp, final.first.p_sharp, init.rho + final.first.p)
                   and _no_uturn(init.last.p_sharp, final.last.p_sharp, final.rho + init.last.p))
        return t

    def transition(self, theta, lp, grad):
        p = self.rng.normal(size=self.dim) / np.sqrt(self.inv_mass)
        start = _State(theta, p, grad, lp, self.inv_mass)
        H0 = self._hamiltonian(lp, p)
        minus = plus = start
        rho = p.copy()
        sample = start
        log_weight = 0.0
        sum_accept, n_leapfrog, depth, divergent = 0.0, 0, 0, False
        while depth < self.max_tree_depth:
            forward = self.rng.uniform() > 0.5
            if forward:
                sub = self._build(plus, depth, self.step_size, H0)
            else:
                sub = self._build(minus, depth, -self.step_size, H0)
            sum_accept += sub.sum_accept
            n_leapfrog += sub.n_leapfrog
            depth += 1
            if sub.diverging:
                divergent = True
            if not sub.valid:
                break
            if sub.log_weight > log_weight or self.rng.uniform() < math.exp(sub.log_weight - log_weight):
                sample = sub.proposal
            log_weight = float(np.logaddexp(log_weight, sub.log_weight))
            if forward:
                # time order: [minus..plus] + [sub.first..sub.last]
                left_rho, right_rho = rho, sub.rho
                bck_fwd, fwd_bck = plus, sub.first
                plus = sub.last
            else:
                # time order: [sub.last..sub.first] + [minus..plus]
                left_rho, right_rho = sub.rho, rho
                bck_fwd, fwd_bck = sub.first, minus
                minus = sub.last
            rho = left_rho + right_rho
            if not (_no_uturn(minus.p_sharp, plus.p_sharp, rho)
                    and _no_uturn(minus.p_sharp, fwd_bck.p_sharp, left_rho + fwd_bck.p)
                    and _no_uturn(bck_fwd.p_sharp, plus.p_sharp, right_rho + bck_fwd.p)):
                break
        return sample, sum_accept / max(n_leapfrog, 1), n_leapfrog, divergent, depth

    def find_reasonable_step_size(self, theta, lp, grad):
        eps = self.step_size
        p = self.rng.normal(size=self.dim) / np.sqrt(self.inv_mass)
        start = _State(theta, p, grad, lp, self.inv_mass)
        H0 = self._hamiltonian(lp, p)
        new = self._leapfrog(start, eps)
        delta = H0 - self._hamiltonian(new.lp, new.p) if math.isfinite(new.lp) else -math.inf
        direction = 1 if delta > math.log(0.8) else -1
        for _ in range(100):
            p = self.rng.normal(size=self.dim) / np.sqrt(self.inv_mass)
            start = _State(theta, p, grad, lp, self.inv_mass)
            H0 = self._hamiltonian(lp, p)
            eps = eps * 2.0**direction
            new = self._leapfrog(start, eps)
            delta = H0 - self._hamiltonian(new.lp, new.p) if math.isfinite(new.lp) else -math.inf
            if direction == 1 and not delta > math.log(0.8):
                break
            if direction == -1 and delta > math.log(0.8):
                break
            if eps > 1e7 or eps < 1e-10:
                break
        self.step_size = eps
        return eps


class _DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat):
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = x_eta * x + (1 - x_eta) * self.x_bar
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


def _windows(n_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """End indices (exclusive) of the metric-adaptation windows."""
    if init_buffer + base_window + term_buffer > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    if base_window <= 0:
        return init_buffer, []
    last = n_warmup - term_buffer
    ends = []
    size = base_window
    end = min(init_buffer + size, last)
    while True:
        ends.append(end)
        if end >= last:
            break
        size *= 2
        end += size
        if end + 2 * size >= last:
            end = last
    return init_buffer, ends


def _initialize(model, rng, attempts=100):
    for _ in range(attempts):
        theta = model.initial_point(rng)
        lp, grad = model.log_density_and_grad(theta)
        if math.isfinite(lp) and np.all(np.isfinite(grad)):
            return theta, lp, grad
    raise ChainFailure("could not find a finite initial point")


def run_chain(model, cfg: McmcConfig, seed) -> ChainResult:
    """Warm up and sample one chain of ``model`` (a :class:`MetaModel`)."""
    rng = np.random.default_rng(seed)
    theta, lp, grad = _initialize(model, rng)
    nuts = NUTS(model.log_density_and_grad, model.dim, rng, cfg.target_accept, cfg.max_tree_depth)
    nuts.find_reasonable_step_size(theta, lp, grad)
    da = _DualAveraging(nuts.step_size, cfg.target_accept)
    init_buffer, ends = _windows(cfg.warmup_iterations)
    window = []
    win_start = init_buffer
    ends = list(ends)
    for it in range(cfg.warmup_iterations):
        state, acc, _, _, _ = nuts.transition(theta, lp, grad)
        theta, lp, grad = state.theta, state.lp, state.grad
        nuts.step_size = da.update(acc)
        if ends and win_start <= it < ends[0]:
            window.append(theta.copy())
            if it == ends[0] - 1:
                w = np.asarray(window)
                n = w.shape[0]
                var = w.var(axis=0, ddof=1) if n > 1 else np.ones(model.dim)
                nuts.inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                nuts.find_reasonable_step_size(theta, lp, grad)
                da.restart(nuts.step_size)
                window = []
                win_start = ends.pop(0)
    nuts.step_size = da.final()

    n = cfg.sampling_iterations
    draws = np.empty((n, model.dim))
    accept = np.empty(n)
    leap = np.empty(n, dtype=int)
    div = np.zeros(n, dtype=bool)
    depth = np.empty(n, dtype=int)
    for it in range(n):
        state, accept[it], leap[it], div[it], depth[it] = nuts.transition(theta, lp, grad)
        theta, lp, grad = state.theta, state.lp, state.grad
        if not math.isfinite(lp):
            raise ChainFailure(f"non-finite log density at iteration {it}")
        draws[it] = theta
    frac = div.mean()
    if frac > cfg.max_divergence_fraction:
        raise ChainFailure(f"{div.sum()} divergent transitions ({frac:.1%}) after warmup")
    if div.any():
        logger.warning("%d divergent transitions after warmup", div.sum())
    return ChainResult(draws, accept, leap, div, depth, nuts.step_size, nuts.inv_mass.copy())
