"""No-U-Turn sampler with windowed adaptation, plus convergence diagnostics.

The transition is the multinomial NUTS variant with the generalized U-turn
criterion (including the checks across merged subtrees). Warmup tunes the
step size by dual averaging and a diagonal inverse metric over doubling
windows. A target is any object with ``dim`` and ``logp_grad(u) -> (lp, grad)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0


class SamplerError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    n_chains: int = 3
    n_iter: int = 2000
    warmup_fraction: float = 0.5
    target_accept: float = 0.9
    max_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25

    def validate(self) -> None:
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")
        if not 0 < self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.n_iter - self.n_warmup < 1:
            raise ValueError("configuration keeps no draws after warmup")

    @property
    def n_warmup(self) -> int:
        return int(self.n_iter * self.warmup_fraction)

    @property
    def n_kept(self) -> int:
        return self.n_iter - self.n_warmup


# ---------------------------------------------------------------------------
# adaptation

class DualAveraging:
    """Step-size adaptation by dual averaging of the acceptance statistic."""

    def __init__(self, target: float, gamma: float, t0: float, kappa: float):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(1.0)

    def restart(self, eps: float) -> None:
        self.mu = math.log(10 * eps)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        a = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.target - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** (-self.kappa)
        self.x_bar = (1 - w) * self.x_bar + w * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class WindowedVariance:
    """Doubling-window schedule for diagonal inverse-metric estimation."""

    def __init__(self, n_warmup: int, init_buffer: int, term_buffer: int, base_window: int):
        self.n_warmup = n_warmup
        self.enabled = n_warmup >= 20
        if self.enabled and init_buffer + base_window + term_buffer > n_warmup:
            init_buffer = int(0.15 * n_warmup)
            term_buffer = int(0.1 * n_warmup)
            base_window = n_warmup - (init_buffer + term_buffer)
        self.init_buffer, self.term_buffer, self.base_window = init_buffer, term_buffer, base_window
        self.counter = 0
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self._reset_stats()

    def _reset_stats(self) -> None:
        self.n = 0
        self.mean = None
        self.m2 = None

    def _in_window(self) -> bool:
        return (self.counter >= self.init_buffer and self.counter < self.n_warmup - self.term_buffer
                and self.counter != self.n_warmup)

    def _end_of_window(self) -> bool:
        return self.counter == self.next_window and self.counter != self.n_warmup

    def _compute_next_window(self) -> None:
        last = self.n_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last and self.next_window + 2 * self.window_size >= self.n_warmup - self.term_buffer:
            self.next_window = last

    def update(self, q: np.ndarray) -> np.ndarray | None:
        """Record ``q``; return a new inverse metric at the end of a window."""
        if not self.enabled:
            return None
        if self._in_window():
            self.n += 1
            if self.mean is None:
                self.mean = q.copy()
                self.m2 = np.zeros_like(q)
            else:
                delta = q - self.mean
                self.mean += delta / self.n
                self.m2 += delta * (q - self.mean)
        if self._end_of_window():
            self._compute_next_window()
            n = self.n
            var = self.m2 / (n - 1) if n > 1 else np.ones_like(self.m2)
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset_stats()
            self.counter += 1
            return var
        self.counter += 1
        return None


# ---------------------------------------------------------------------------
# NUTS transition

class _State:
    __slots__ = ("q", "p", "lp", "grad")

    def __init__(self, q, p, lp, grad):
        self.q, self.p, self.lp, self.grad = q, p, lp, grad


@dataclass
class _Subtree:
    valid: bool
    proposal: _State | None = None
    p_beg: np.ndarray | None = None
    p_sharp_beg: np.ndarray | None = None
    p_end: np.ndarray | None = None
    p_sharp_end: np.ndarray | None = None
    rho: np.ndarray | None = None
    log_sum_weight: float = -math.inf


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def _uturn_free(p_sharp_minus, p_sharp_plus, rho) -> bool:
    return float(np.dot(p_sharp_plus, rho)) > 0 and float(np.dot(p_sharp_minus, rho)) > 0


class NUTS:
    """One chain of the no-U-turn sampler."""

    def __init__(self, target, rng: np.random.Generator, max_depth: int = 10):
        self.target = target
        self.rng = rng
        self.max_depth = max_depth
        self.inv_metric = np.ones(target.dim)
        self.eps = 1.0
        self._reset_transition_stats()

    def _reset_transition_stats(self):
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False

    def _evaluate(self, q):
        try:
            lp, grad = self.target.logp_grad(q)
        except (FloatingPointError, ValueError, OverflowError):
            return -math.inf, None
        if not math.isfinite(lp) or not np.all(np.isfinite(grad)):
            return -math.inf, None
        return lp, grad

    def _kinetic(self, p) -> float:
        return 0.5 * float(np.dot(p, self.inv_metric * p))

    def _leapfrog(self, s: _State, eps: float) -> _State | None:
        p = s.p + 0.5 * eps * s.grad
        q = s.q + eps * self.inv_metric * p
        if not np.all(np.isfinite(q)):
            return None
        lp, grad = self._evaluate(q)
        if grad is None:
            return None
        return _State(q, p + 0.5 * eps * grad, lp, grad)

    def _sample_momentum(self) -> np.ndarray:
        return self.rng.standard_normal(self.target.dim) / np.sqrt(self.inv_metric)

    def _build_tree(self, depth: int, cur: list, direction: int, H0: float) -> _Subtree:
        if depth == 0:
            self.n_leapfrog += 1
            nxt = self._leapfrog(cur[0], direction * self.eps)
            if nxt is None:
                self.divergent = True
                return _Subtree(False)
            h = -nxt.lp + self._kinetic(nxt.p)
            if not math.isfinite(h):
                h = math.inf
            if h - H0 > MAX_DELTA_H:
                self.divergent = True
            self.sum_metro += 1.0 if H0 - h > 0 else math.exp(H0 - h)
            cur[0] = nxt
            if self.divergent:
                return _Subtree(False)
            p_sharp = self.inv_metric * nxt.p
            return _Subtree(True, nxt, nxt.p, p_sharp, nxt.p, p_sharp, nxt.p.copy(), H0 - h)

        init = self._build_tree(depth - 1, cur, direction, H0)
        if not init.valid:
            return _Subtree(False)
        final = self._build_tree(depth - 1, cur, direction, H0)
        if not final.valid:
            return _Subtree(False)
        lsw = _logaddexp(init.log_sum_weight, final.log_sum_weight)
        if final.log_sum_weight > lsw or self.rng.random() < math.exp(final.log_sum_weight - lsw):
            proposal = final.proposal
        else:
            proposal = init.proposal
        rho = init.rho + final.rho
        persist = _uturn_free(init.p_sharp_beg, final.p_sharp_end, rho)
        persist = persist and _uturn_free(init.p_sharp_beg, final.p_sharp_beg, init.rho + final.p_beg)
        persist = persist and _uturn_free(init.p_sharp_end, final.p_sharp_end, final.rho + init.p_end)
        return _Subtree(persist, proposal, init.p_beg, init.p_sharp_beg, final.p_end, final.p_sharp_end,
                        rho, lsw)

    def transition(self, s: _State) -> tuple[_State, dict]:
        self._reset_transition_stats()
        p0 = self._sample_momentum()
        s = _State(s.q, p0, s.lp, s.grad)
        H0 = -s.lp + self._kinetic(p0)
        fwd = [s]
        bck = [s]
        sample = s
        p_sharp0 = self.inv_metric * p0
        # trajectory ends: momenta and sharp momenta at the outer and inner edges
        p_fwd_bck = p_fwd_fwd = p0
        ps_fwd_bck = ps_fwd_fwd = p_sharp0
        p_bck_fwd = p_bck_bck = p0
        ps_bck_fwd = ps_bck_bck = p_sharp0
        rho = p0.copy()
        log_sum_weight = 0.0
        depth = 0
        while depth < self.max_depth:
            if self.rng.random() > 0.5:
                rho_bck = rho
                p_bck_fwd, ps_bck_fwd = p_fwd_bck, ps_fwd_bck
                sub = self._build_tree(depth, fwd, 1, H0)
                if not sub.valid:
                    break
                p_fwd_bck, ps_fwd_bck = sub.p_beg, sub.p_sharp_beg
                p_fwd_fwd, ps_fwd_fwd = sub.p_end, sub.p_sharp_end
                rho_fwd = sub.rho
            else:
                rho_fwd = rho
                p_fwd_bck, ps_fwd_bck = p_bck_fwd, ps_bck_fwd
                sub = self._build_tree(depth, bck, -1, H0)
                if not sub.valid:
                    break
                p_bck_fwd, ps_bck_fwd = sub.p_beg, sub.p_sharp_beg
                p_bck_bck, ps_bck_bck = sub.p_end, sub.p_sharp_end
                rho_bck = sub.rho
            depth += 1
            if sub.log_sum_weight > log_sum_weight:
                sample = sub.proposal
            elif self.rng.random() < math.exp(sub.log_sum_weight - log_sum_weight):
                sample = sub.proposal
            log_sum_weight = _logaddexp(log_sum_weight, sub.log_sum_weight)
            rho = rho_bck + rho_fwd
            persist = _uturn_free(ps_bck_bck, ps_fwd_fwd, rho)
            persist = persist and _uturn_free(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            persist = persist and _uturn_free(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break
        accept = self.sum_metro / max(self.n_leapfrog, 1)
        info = {"accept_stat": accept, "treedepth": depth, "n_leapfrog": self.n_leapfrog,
                "divergent": self.divergent, "lp": sample.lp}
        return _State(sample.q, None, sample.lp, sample.grad), info

    def init_stepsize(self, s: _State) -> None:
        """Double or halve the step size until one leapfrog step crosses acceptance 0.8."""
        direction = 0
        for _ in range(100):
            p = self._sample_momentum()
            H0 = -s.lp + self._kinetic(p)
            nxt = self._leapfrog(_State(s.q, p, s.lp, s.grad), self.eps)
            h = math.inf if nxt is None else -nxt.lp + self._kinetic(nxt.p)
            delta = H0 - h
            if direction == 0:
                direction = 1 if delta > math.log(0.8) else -1
            if direction == 1 and not delta > math.log(0.8):
                break
            if direction == -1 and not delta < math.log(0.8):
                break
            self.eps = self.eps * 2 if direction == 1 else self.eps / 2
            if self.eps > 1e7:
                raise SamplerError("step size diverged upward during initialization; posterior may be improper")
            if self.eps == 0:
                raise SamplerError("step size collapsed to zero during initialization")


# ---------------------------------------------------------------------------
# driver

@dataclass
class PosteriorSample:
    """Post-warmup draws in unconstrained coordinates.

    Arrays are indexed ``[chain, draw, ...]``.
    """

    draws: np.ndarray
    lp: np.ndarray
    accept_stat: np.ndarray
    treedepth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    step_size: np.ndarray
    inv_metric: np.ndarray
    n_warmup: int
    names: list[str] | None = None
    config: SamplerConfig | None = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_kept(self) -> int:
        return self.draws.shape[1]

    def flat(self) -> np.ndarray:
        """Draws stacked chain by chain, shape ``(chains * kept, dim)``."""
        return self.draws.reshape(-1, self.draws.shape[-1])

    def diagnostics(self, values: np.ndarray | None = None) -> "Diagnostics":
        x = self.draws if values is None else values
        return Diagnostics.from_chains(x, self)


def _initial_point(target, rng: np.random.Generator, radius: float, attempts: int = 100):
    for _ in range(attempts):
        q = rng.uniform(-radius, radius, target.dim)
        try:
            lp, grad = target.logp_grad(q)
        except (FloatingPointError, ValueError, OverflowError):
            continue
        if math.isfinite(lp) and np.all(np.isfinite(grad)):
            return _State(q, None, lp, grad)
    raise SamplerError(f"no finite log density and gradient after {attempts} initializations")


def run_chain(target, config: SamplerConfig, chain: int, init: np.ndarray | None = None) -> dict:
    """Run one chain; returns per-draw arrays for the kept iterations."""
    rng = _rng.stream(config.seed, _rng.SAMPLER, chain)
    sampler = NUTS(target, rng, config.max_depth)
    if init is None:
        state = _initial_point(target, rng, config.init_radius)
    else:
        lp, grad = target.logp_grad(np.asarray(init, dtype=float))
        state = _State(np.asarray(init, dtype=float), None, lp, grad)
    n_warm, n_kept = config.n_warmup, config.n_kept
    da = DualAveraging(config.target_accept, config.gamma, config.t0, config.kappa)
    win = WindowedVariance(n_warm, config.init_buffer, config.term_buffer, config.base_window)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        sampler.init_stepsize(state)
        da.restart(sampler.eps)
        for it in range(n_warm):
            state, info = sampler.transition(state)
            sampler.eps = da.update(info["accept_stat"])
            var = win.update(state.q)
            if var is not None:
                sampler.inv_metric = var
                sampler.init_stepsize(state)
                da.restart(sampler.eps)
        if n_warm > 0:
            sampler.eps = da.final()
        out = {
            "draws": np.empty((n_kept, target.dim)),
            "lp": np.empty(n_kept),
            "accept_stat": np.empty(n_kept),
            "treedepth": np.empty(n_kept, dtype=int),
            "n_leapfrog": np.empty(n_kept, dtype=int),
            "divergent": np.zeros(n_kept, dtype=bool),
        }
        for i in range(n_kept):
            state, info = sampler.transition(state)
            out["draws"][i] = state.q
            for k in ("lp", "accept_stat", "treedepth", "n_leapfrog", "divergent"):
                out[k][i] = info[k]
    out["step_size"] = sampler.eps
    out["inv_metric"] = sampler.inv_metric.copy()
    log.info("chain %d: step size %.3g, mean tree depth %.2f, divergences %d",
             chain, sampler.eps, out["treedepth"].mean(), int(out["divergent"].sum()))
    return out


def sample(target, config: SamplerConfig | None = None, inits=None, names=None) -> PosteriorSample:
    """Run ``config.n_chains`` independent chains and collect the kept draws."""
    config = config or SamplerConfig()
    config.validate()
    chains = []
    for c in range(config.n_chains):
        init = None if inits is None else inits[c]
        chains.append(run_chain(target, config, c, init))

    def stack(k):
        return np.stack([ch[k] for ch in chains])

    if names is None and hasattr(target, "param_names"):
        names = target.param_names()
    return PosteriorSample(
        draws=stack("draws"), lp=stack("lp"), accept_stat=stack("accept_stat"),
        treedepth=stack("treedepth"), n_leapfrog=stack("n_leapfrog"), divergent=stack("divergent"),
        step_size=np.array([ch["step_size"] for ch in chains]), inv_metric=stack("inv_metric"),
        n_warmup=config.n_warmup, names=names, config=config,
    )


# ---------------------------------------------------------------------------
# diagnostics

def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim < 2:
        raise ValueError("expected draws shaped (chains, draws[, params])")
    if x.shape[0] < 2 and x.shape[1] < 8:
        raise ValueError("need at least 2 chains or 8 draws")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1] // 2
    if n < 2:
        raise ValueError("need at least 4 draws per chain to split")
    first = x[:, :n]
    second = x[:, x.shape[1] - n:]
    return np.concatenate([first, second], axis=0)


def _undefined(value: np.ndarray, scalar: bool):
    if scalar:
        v = float(value)
        return None if not math.isfinite(v) else v
    return value


def split_rhat(x):
    """Split R-hat.

    Parameters
    ----------
    x : array, shape (chains, draws) or (chains, draws, params)

    Returns
    -------
    float or None, or array with NaN marking parameters whose within-chain
    variance is zero.
    """
    x = _as_chains(x)
    scalar = x.ndim == 2
    s = _split(x)
    n = s.shape[1]
    means = s.mean(axis=1)
    W = s.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        var_plus = (n - 1) / n * W + B / n
        r = np.sqrt(var_plus / W)
    r = np.where(W > 0, r, np.nan)
    return _undefined(r, scalar)


def _autocov(s: np.ndarray) -> np.ndarray:
    """Biased autocovariance along axis 1 via FFT."""
    n = s.shape[1]
    c = s - s.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(c, n=size, axis=1)
    ac = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return ac / n


def _ess_one(acov: np.ndarray, chain_mean: np.ndarray) -> float:
    m, n = acov.shape
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if not var_plus > 0 or not mean_var > 0:
        return math.nan
    mean_acov = acov.mean(axis=0)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - mean_acov[1]) / var_plus if n > 1 else 0.0
    rho[1] = rho_odd
    t = 1
    while t < n - 4 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - mean_acov[t + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - mean_acov[t + 2]) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    if rho_even > 0:
        rho[max_t + 1 if max_t + 1 < n else max_t] = rho_even
    # Geyer's initial monotone sequence
    t = 1
    while t <= max_t - 3:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t + 1 if max_t + 1 < n else max_t]
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def ess(x):
    """Bulk effective sample size of split chains (autocorrelation sum with Geyer truncation).

    Same shapes and undefined marker as :func:`split_rhat`.
    """
    x = _as_chains(x)
    scalar = x.ndim == 2
    s = _split(x)
    if scalar:
        s = s[..., None]
    out = np.empty(s.shape[2])
    acov = _autocov(np.moveaxis(s, 2, 0).reshape(-1, s.shape[1])).reshape(s.shape[2], s.shape[0], -1)
    means = s.mean(axis=1)
    for j in range(s.shape[2]):
        out[j] = _ess_one(acov[j], means[:, j])
    return _undefined(out[0], True) if scalar else out


@dataclass
class Diagnostics:
    rhat: np.ndarray
    ess: np.ndarray
    n_divergent: int
    n_max_depth: int
    names: list[str] | None = None

    @classmethod
    def from_chains(cls, x, sample: PosteriorSample | None = None, names=None) -> "Diagnostics":
        r = split_rhat(x)
        e = ess(x)
        n_div = int(sample.divergent.sum()) if sample is not None else 0
        n_depth = 0
        if sample is not None and sample.config is not None:
            n_depth = int((sample.treedepth >= sample.config.max_depth).sum())
        return cls(np.atleast_1d(r), np.atleast_1d(e), n_div, n_depth,
                   names if names is not None else (sample.names if sample is not None else None))

    @property
    def max_rhat(self) -> float | None:
        r = self.rhat[np.isfinite(self.rhat)]
        return float(r.max()) if r.size else None

    @property
    def min_ess(self) -> float | None:
        e = self.ess[np.isfinite(self.ess)]
        return float(e.min()) if e.size else None

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "max_rhat": self.max_rhat,
            "min_ess": self.min_ess,
            "n_divergent": self.n_divergent,
            "n_max_depth": self.n_max_depth,
            "undefined": int(np.sum(~np.isfinite(self.rhat))),
            "rhat": clean(self.rhat),
            "ess": clean(self.ess),
            "names": self.names,
        }
