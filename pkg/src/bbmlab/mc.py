"""Monte Carlo estimation of the weighted Brownian kernels.

The object of interest is the exponential weight

    exp( - beta int_s^t |B_r / (sqrt 2 r)|^alpha (1 + f(B_r, r)) dr )

averaged over forward Wiener paths (total mass) or Brownian bridges (the
pointwise kernel, times the Gaussian prefactor).  The perturbation f is
either zero or one of the explicit envelopes

    f+(y,r) = min(L(|y/r|^a + r^-b), 1),
    f-(y,r) = -min(L(|y/r|^a + r^-b), eta),

where eta is the largest value in (0, 1/2] keeping y -> (y/r)^alpha (1+f-)
non-decreasing for all r >= (2L)^{1/b}.

Sampling is chunked: chunk i draws from Philox(key=(seed, i)), and chunks
are reduced in index order, so results are bit-reproducible and two
estimates with the same seed share every path (making pathwise-monotone
comparisons exact).  Path integrals use the trapezoidal rule on the
sampled skeleton, with midpoint evaluation on steps that cross zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError, NumericalFailure

CHUNK = 20_000


@dataclass(frozen=True)
class KernelEstimate:
    value: float
    stderr: float
    n_samples: int
    integrator_step: float

    def within(self, other: float, n_sigma: float = 3.0) -> bool:
        return abs(self.value - other) <= n_sigma * self.stderr

    def to_json_dict(self, **inputs):
        rec = {"value": self.value, "stderr": self.stderr,
               "n_samples": self.n_samples, "step": self.integrator_step}
        rec.update(inputs)
        return rec


@dataclass(frozen=True)
class PathSampler:
    """Reproducible skeleton generator used by the estimators.

    scheme is "forward" (independent N(0, dr) increments) or "bridge"
    (sequential conditional Gaussians, endpoints hit exactly).  The same
    seed and parameters give a bit-identical path array; the draw order
    matches the marching estimators, chunked by Philox(key=(seed, chunk)).
    """

    seed: int
    step: float
    scheme: str = "forward"

    def paths(self, n: int, s: float, t: float, x: float, y: float | None = None):
        if self.scheme not in ("forward", "bridge"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "bridge" and y is None:
            raise ConfigurationError("bridge sampling needs the endpoint y")
        r_grid = _weight_grid(s, t, self.step)
        m = len(r_grid) - 1
        cols = []

        def hook(cur, j):
            cols.append(cur.copy())

        out = []
        offset = 0
        for i, size in enumerate(_chunk_sizes(n)):
            rng = _chunk_rng(self.seed, i)
            cols.clear()
            marcher = _PathMarcher(r_grid, 0.0, 1.0, hook=hook)
            if self.scheme == "forward":
                _march_forward(rng, size, x, r_grid, marcher)
            else:
                _march_bridge(rng, size, x, y, r_grid, marcher)
            out.append(np.column_stack(cols))
            offset += size
        return r_grid, np.concatenate(out, axis=0)


@dataclass(frozen=True)
class ErrorEnvelope:
    """Explicit perturbation pair; eta is found by bisection once."""

    L: float
    a: float
    b: float
    alpha: float
    eta: float

    @property
    def r0(self) -> float:
        return (2.0 * self.L) ** (1.0 / self.b)

    def magnitude(self, y, r):
        return self.L * (np.abs(y / r) ** self.a + r ** (-self.b))

    def f_plus(self, y, r):
        return np.minimum(self.magnitude(y, r), 1.0)

    def f_minus(self, y, r):
        return -np.minimum(self.magnitude(y, r), self.eta)


def _monotone_on_grid(L, a, b, alpha, eta, n_y=1000, n_r=40, r_factor=1e4):
    """Check y -> (y/r)^alpha (1 + f-) non-decreasing on a (y, r) grid."""
    r0 = (2.0 * L) ** (1.0 / b)
    for r in np.geomspace(r0, r0 * r_factor, n_r):
        # resolve the region around the cap; beyond it the map is clearly
        # increasing, so scan up to twice the cap location
        u_cap = ((eta - L * r ** (-b)) / L)
        u_hi = 2.0 * max(u_cap, 0.0) ** (1.0 / a) if u_cap > 0 else 1.0
        y = np.linspace(0.0, max(u_hi, 1.0) * r, n_y)
        vals = (y / r) ** alpha * (1.0 - np.minimum(L * ((y / r) ** a + r ** (-b)), eta))
        if np.any(np.diff(vals) < -1e-15):
            return False
    return True


def make_envelope(L: float, a: float, b: float, alpha: float,
                  grid=(1000, 40)) -> ErrorEnvelope:
    """Bisect for the largest admissible eta in (0, 1/2]."""
    if min(L, a, b) <= 0:
        raise ConfigurationError("envelope parameters must be positive")
    n_y, n_r = grid
    if _monotone_on_grid(L, a, b, alpha, 0.5, n_y, n_r):
        return ErrorEnvelope(L, a, b, alpha, 0.5)
    lo, hi = 0.0, 0.5
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _monotone_on_grid(L, a, b, alpha, mid, n_y, n_r):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise NumericalFailure("no admissible eta found (envelope too steep)")
    return ErrorEnvelope(L, a, b, alpha, lo)


def _chunk_sizes(n):
    sizes = [CHUNK] * (n // CHUNK)
    if n % CHUNK:
        sizes.append(n % CHUNK)
    return sizes


def _chunk_rng(seed, index):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(index)]))


def _weight_grid(s, t, step):
    m = max(2, int(math.ceil((t - s) / step)))
    return np.linspace(s, t, m + 1)


class _PathMarcher:
    """Online accumulation of the trapezoidal path integral while the
    skeleton is generated column by column.  Memory stays O(n paths);
    steps that cross zero use the midpoint value (|.|^alpha kink).

    Optional per-column hooks receive (positions, r) for side statistics
    (tube exits, endpoint snapshots, ...).
    """

    def __init__(self, r_grid, beta, alpha, f=None, weight_fn=None, hook=None):
        self.r_grid = r_grid
        self.beta = beta
        if weight_fn is None:
            sqrt2 = math.sqrt(2.0)
            weight_fn = lambda y, r: np.abs(y / (sqrt2 * r)) ** alpha
        if f is not None:
            base = weight_fn
            weight_fn = lambda y, r: base(y, r) * (1.0 + f(y, r))
        self.wval = weight_fn
        self.hook = hook

    def run(self, n, start_col, advance):
        """advance(cur, j) -> positions at column j+1."""
        r = self.r_grid
        cur = start_col
        w_prev = self.wval(cur, r[0])
        total = np.zeros(n)
        if self.hook:
            self.hook(cur, 0)
        for j in range(len(r) - 1):
            nxt = advance(cur, j)
            dr = r[j + 1] - r[j]
            w_next = self.wval(nxt, r[j + 1])
            trap = 0.5 * (w_prev + w_next)
            crossing = cur * nxt < 0.0
            if np.any(crossing):
                trap = np.where(crossing,
                                self.wval(0.5 * (cur + nxt), r[j] + 0.5 * dr), trap)
            total += dr * trap
            cur, w_prev = nxt, w_next
            if self.hook:
                self.hook(cur, j + 1)
        return np.exp(-self.beta * total)


def _march_forward(rng, n, x, r_grid, marcher):
    dr = np.diff(r_grid)

    def advance(cur, j):
        return cur + math.sqrt(dr[j]) * rng.standard_normal(n)

    return marcher.run(n, np.full(n, float(x)), advance)


def _march_bridge(rng, n, x, y, r_grid, marcher):
    """Sequential conditional-Gaussian bridge; endpoints exact."""
    m = len(r_grid) - 1

    def advance(cur, j):
        if j == m - 1:
            return np.full(n, float(y))
        dt_step = r_grid[j + 1] - r_grid[j]
        remain = r_grid[-1] - r_grid[j]
        mean = cur + (y - cur) * (dt_step / remain)
        var = dt_step * (remain - dt_step) / remain
        return mean + math.sqrt(var) * rng.standard_normal(n)

    return marcher.run(n, np.full(n, float(x)), advance)


def _validate(s, t, n_samples, step):
    if not (0.0 < s < t):
        raise DomainError(f"need 0 < s < t, got s={s}, t={t}")
    if n_samples < 100:
        raise ConfigurationError("need at least 100 samples")
    if step > min(1.0, s) / 10.0:
        raise DomainError(f"step {step} too coarse; need <= min(1, s)/10")


def estimate_total_mass(s: float, t: float, x: float, params, n_samples: int,
                        step: float, seed: int, envelope: ErrorEnvelope | None = None,
                        branch: str = "zero") -> KernelEstimate:
    """Forward-path estimate of E[exp(-beta int_s^t |B/(sqrt2 r)|^a (1+f))].

    branch selects f: "zero", "plus" or "minus" of the given envelope.
    Degenerate t == s returns exactly 1.
    """
    if t == s:
        return KernelEstimate(1.0, 0.0, n_samples, step)
    _validate(s, t, n_samples, step)
    beta, alpha = params.beta, params.alpha
    if beta == 0.0:
        return KernelEstimate(1.0, 0.0, n_samples, step)
    f = _branch_fn(envelope, branch)
    r_grid = _weight_grid(s, t, step)
    acc_sum, acc_sq, count = 0.0, 0.0, 0
    for i, size in enumerate(_chunk_sizes(n_samples)):
        rng = _chunk_rng(seed, i)
        marcher = _PathMarcher(r_grid, beta, alpha, f=f)
        w = _march_forward(rng, size, x, r_grid, marcher)
        acc_sum += w.sum()
        acc_sq += (w ** 2).sum()
        count += size
    mean = acc_sum / count
    var = max(acc_sq / count - mean ** 2, 0.0)
    return KernelEstimate(mean, math.sqrt(var / count), count, float(r_grid[1] - r_grid[0]))


def _branch_fn(envelope, branch):
    if branch == "zero" or envelope is None:
        return None
    if branch == "plus":
        return envelope.f_plus
    if branch == "minus":
        return envelope.f_minus
    raise ConfigurationError(f"unknown envelope branch {branch!r}")


def estimate_gtilde(s: float, x: float, t: float, y: float, params, n_samples: int,
                    step: float, seed: int, envelope: ErrorEnvelope | None = None,
                    branch: str = "zero") -> KernelEstimate:
    """Bridge estimate of the pointwise kernel (conditional weight times the
    Gaussian prefactor)."""
    _validate(s, t, n_samples, step)
    beta, alpha = params.beta, params.alpha
    pref = math.exp(-((y - x) ** 2) / (2.0 * (t - s))) / math.sqrt(2.0 * math.pi * (t - s))
    if beta == 0.0:
        return KernelEstimate(pref, 0.0, n_samples, step)
    f = _branch_fn(envelope, branch)
    r_grid = _weight_grid(s, t, step)
    acc_sum, acc_sq, count = 0.0, 0.0, 0
    for i, size in enumerate(_chunk_sizes(n_samples)):
        rng = _chunk_rng(seed, i)
        marcher = _PathMarcher(r_grid, beta, alpha, f=f)
        w = _march_bridge(rng, size, x, y, r_grid, marcher)
        acc_sum += w.sum()
        acc_sq += (w ** 2).sum()
        count += size
    mean = acc_sum / count
    var = max(acc_sq / count - mean ** 2, 0.0)
    return KernelEstimate(pref * mean, pref * math.sqrt(var / count), count,
                          float(r_grid[1] - r_grid[0]))


def localization_probe(s: float, t: float, x: float, y: float, eta_exponent: float,
                       params, n_samples: int, step: float, seed: int) -> dict:
    """Share of the conditional weight carried by paths leaving the tube
    |B_r| < r^{(kappa + eta)/2}."""
    if eta_exponent <= 0:
        raise DomainError("eta must be positive")
    _validate(s, t, n_samples, step)
    beta, alpha = params.beta, params.alpha
    kappa = params.kappa()
    expo = (kappa + eta_exponent) / 2.0
    r_grid = _weight_grid(s, t, step)
    tube = r_grid ** expo
    w_all, w_exit, count = 0.0, 0.0, 0
    for i, size in enumerate(_chunk_sizes(n_samples)):
        rng = _chunk_rng(seed, i)
        exits = np.zeros(size, dtype=bool)

        def hook(cur, j):
            nonlocal exits
            exits |= np.abs(cur) >= tube[j]

        marcher = _PathMarcher(r_grid, beta, alpha, hook=hook)
        w = _march_bridge(rng, size, x, y, r_grid, marcher)
        w_all += w.sum()
        w_exit += w[exits].sum()
        count += size
    ratio = w_exit / w_all if w_all > 0 else 0.0
    return {"ratio": ratio, "weight_total": w_all / count,
            "weight_exit": w_exit / count, "n_samples": count}


def alpha2_exponent_fit(beta: float, s_list, t: float, n_samples: int, step: float,
                        seed: int) -> dict:
    """Fit the decay exponent of E[exp(-beta int_s^t (B_r/r)^2 dr)] against
    log(s/t); the weight here uses y/r directly (no sqrt-2 normalization).

    Expected slope: (sqrt(1 + 8 beta) - 1) / 4.
    """
    if beta == 0.0:
        return {"slope": 0.0, "intercept": 0.0, "r2": 1.0, "points": []}
    vals, logs = [], []
    weight_fn = lambda yv, r: (yv / r) ** 2
    for idx, s in enumerate(sorted(s_list)):
        eff_step = min(step, min(1.0, s) / 10.0)
        _validate(s, t, n_samples, eff_step)
        r_grid = _weight_grid(s, t, eff_step)
        acc, count = 0.0, 0
        for i, size in enumerate(_chunk_sizes(n_samples)):
            rng = _chunk_rng(seed + idx, i)
            marcher = _PathMarcher(r_grid, beta, 2.0, weight_fn=weight_fn)
            w = _march_forward(rng, size, 0.0, r_grid, marcher)
            acc += w.sum()
            count += size
        vals.append(acc / count)
        logs.append(math.log(s / t))
    logs = np.array(logs)
    lv = np.log(np.array(vals))
    slope, intercept = np.polyfit(logs, lv, 1)
    pred = slope * logs + intercept
    ss_res = float(np.sum((lv - pred) ** 2))
    ss_tot = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    out = {"slope": float(slope), "intercept": float(intercept), "r2": r2,
           "points": list(zip(logs.tolist(), lv.tolist()))}
    if r2 < 0.99:
        out["warning"] = f"fit quality r2={r2:.4f} below 0.99"
    return out


def bridge_barrier_probability(s: float, x: float, t: float, y: float, K: float) -> float:
    """P(exists r in [s,t]: B_r >= K | bridge x -> y) = exp(-2(K-x)(K-y)/(t-s))."""
    if x >= K or y >= K:
        raise DomainError("endpoints must lie below the barrier")
    if not (t > s):
        raise DomainError("need t > s")
    return math.exp(-2.0 * (K - x) * (K - y) / (t - s))


def bridge_barrier_mc(s: float, x: float, t: float, y: float, K: float,
                      n_samples: int, step: float, seed: int) -> KernelEstimate:
    """Unbiased MC for the barrier-crossing probability.

    The skeleton indicator alone is biased low by O(sqrt step); each
    sub-interval is therefore completed with the exact conditional
    crossing probability given its endpoints, which removes the bias.
    """
    if x >= K or y >= K:
        raise DomainError("endpoints must lie below the barrier")
    if n_samples < 100:
        raise ConfigurationError("need at least 100 samples")
    m = max(2, int(math.ceil((t - s) / step)))
    r_grid = np.linspace(s, t, m + 1)
    dt_step = r_grid[1] - r_grid[0]
    acc_sum, acc_sq, count = 0.0, 0.0, 0
    for i, size in enumerate(_chunk_sizes(n_samples)):
        rng = _chunk_rng(seed, i)
        cur = np.full(size, float(x))
        hit = cur >= K
        log_stay = np.zeros(size)
        for j in range(m):
            if j == m - 1:
                nxt = np.full(size, float(y))
            else:
                remain = r_grid[-1] - r_grid[j]
                mean_ = cur + (y - cur) * (dt_step / remain)
                var_ = dt_step * (remain - dt_step) / remain
                nxt = mean_ + math.sqrt(var_) * rng.standard_normal(size)
            hit |= nxt >= K
            # conditional crossing probability inside the sub-interval
            a = np.clip(K - cur, 0.0, None)
            b = np.clip(K - nxt, 0.0, None)
            p_cross = np.clip(np.exp(-2.0 * a * b / dt_step), 0.0, 1.0 - 1e-16)
            log_stay += np.where((a > 0) & (b > 0), np.log1p(-p_cross), 0.0)
            cur = nxt
        v = np.where(hit, 1.0, 1.0 - np.exp(log_stay))
        acc_sum += v.sum()
        acc_sq += (v ** 2).sum()
        count += size
    mean = acc_sum / count
    var = max(acc_sq / count - mean ** 2, 0.0)
    return KernelEstimate(mean, math.sqrt(var / count), count, dt_step)


def log_i0(z):
    """log I_0(z) for z >= 0: power series below 20, two-term asymptotic
    e^z / sqrt(2 pi z) (1 + 1/(8z)) beyond, evaluated in log space."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 20.0
    if np.any(small):
        zs = z[small]
        term = np.ones_like(zs)
        acc = np.ones_like(zs)
        for k in range(1, 40):
            term = term * (zs / (2.0 * k)) ** 2
            acc += term
        out[small] = np.log(acc)
    if np.any(~small):
        zl = z[~small]
        out[~small] = zl - 0.5 * np.log(2.0 * math.pi * zl) + np.log1p(1.0 / (8.0 * zl))
    return out


def bessel_density(r0: float, s: float, z) -> np.ndarray:
    """Density of the radius at time s of a planar Brownian motion started
    at radius r0: (z/s) exp(-(r0^2+z^2)/(2s)) I_0(r0 z / s), via log-space
    Bessel evaluation so large arguments cannot overflow."""
    if s <= 0:
        raise DomainError("s must be positive")
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0):
        raise DomainError("z must be nonnegative")
    with np.errstate(divide="ignore"):
        logz = np.where(z_arr > 0, np.log(np.maximum(z_arr, 1e-300)), -np.inf)
        log_dens = (logz - math.log(s)
                    - (r0 ** 2 + z_arr ** 2) / (2.0 * s)
                    + log_i0(r0 * z_arr / s))
    out = np.exp(log_dens)
    return float(out) if np.isscalar(z) else out


def export_estimate_json(path, estimate: KernelEstimate, **inputs):
    with open(path, "w") as fh:
        json.dump(estimate.to_json_dict(**inputs), fh, indent=2, sort_keys=True)
        fh.write("\n")
