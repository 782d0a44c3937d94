"""Bayesian optimization of language-model hyperparameters.

Minimizes validation bits/phone over a small box of hyperparameters with a
Gaussian process surrogate (squared-exponential kernel, per-dimension
length-scales, noise term) and the expected-improvement acquisition rule.
Integer dimensions are relaxed to the unit interval and rounded only when a
proposal is turned back into native units. A plain random-search mode uses
the same trial bookkeeping, and every trial can be streamed to a JSON-lines
log and replayed to resume an interrupted search.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .errors import (
    AllTrialsDivergedError,
    SingularKernelError,
    TrainingDivergedError,
)
from .seeding import derive_rng

DIMENSION_KINDS = ("integer", "continuous", "log-continuous")


@dataclass(frozen=True)
class Dimension:
    """One search dimension: closed interval in native units."""

    name: str
    kind: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in DIMENSION_KINDS:
            raise ValueError(f"unknown dimension kind {self.kind!r}")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError(f"{self.name}: bounds must be finite")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.kind == "log-continuous" and self.lower <= 0:
            raise ValueError(f"{self.name}: log scale needs positive bounds")

    def to_unit(self, value: float) -> float:
        if self.kind == "log-continuous":
            return ((math.log(value) - math.log(self.lower))
                    / (math.log(self.upper) - math.log(self.lower)))
        return (value - self.lower) / (self.upper - self.lower)

    def from_unit(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.kind == "log-continuous":
            value = math.exp(math.log(self.lower)
                             + u * (math.log(self.upper)
                                    - math.log(self.lower)))
        else:
            value = self.lower + u * (self.upper - self.lower)
        if self.kind == "integer":
            return int(min(max(round(value), math.ceil(self.lower)),
                           math.floor(self.upper)))
        return value


@dataclass(frozen=True)
class SearchSpace:
    dimensions: tuple[Dimension, ...]

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("duplicate dimension names")
        if not self.dimensions:
            raise ValueError("search space needs at least one dimension")

    @property
    def d(self) -> int:
        return len(self.dimensions)

    def to_unit(self, native: dict) -> np.ndarray:
        return np.array([dim.to_unit(native[dim.name])
                         for dim in self.dimensions])

    def from_unit(self, u) -> dict:
        return {dim.name: dim.from_unit(v)
                for dim, v in zip(self.dimensions, np.asarray(u))}


def default_space() -> SearchSpace:
    return SearchSpace(dimensions=(
        Dimension("layers", "integer", 1, 3),
        Dimension("hidden_size", "integer", 32, 512),
        Dimension("pca_d", "integer", 2, 300),
        Dimension("dropout", "continuous", 0.0, 0.5),
    ))


@dataclass(frozen=True)
class Trial:
    """One evaluated configuration."""

    native: dict
    unit: np.ndarray
    objective: float
    status: str = "ok"

    def __post_init__(self):
        if self.status not in ("ok", "diverged"):
            raise ValueError(f"unknown trial status {self.status!r}")
        if self.status == "ok" and not math.isfinite(self.objective):
            raise ValueError("ok trials need a finite objective")

    def to_json(self) -> str:
        return json.dumps({"native": self.native,
                           "unit": np.asarray(self.unit).tolist(),
                           "objective": self.objective,
                           "status": self.status}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Trial":
        rec = json.loads(line)
        return cls(native=rec["native"],
                   unit=np.asarray(rec["unit"], dtype=np.float64),
                   objective=float(rec["objective"]), status=rec["status"])


# --- Gaussian process surrogate ---------------------------------------------

_JITTERS = (0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4)


def _se_kernel(xa, xb, length_scales, signal_var):
    diff = xa[:, None, :] - xb[None, :, :]
    sq = np.sum((diff / length_scales) ** 2, axis=2)
    return signal_var * np.exp(-0.5 * sq)


def _chol_with_jitter(k, scale):
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(k + jitter * scale * np.eye(len(k)))
        except np.linalg.LinAlgError:
            continue
    raise SingularKernelError(
        f"kernel matrix of size {len(k)} stayed singular after jitter up to "
        f"{_JITTERS[-1] * scale:g}")


@dataclass
class GPPosterior:
    """Fitted GP; empty training set falls back to the prior."""

    x: np.ndarray
    y: np.ndarray
    length_scales: np.ndarray
    signal_var: float
    noise_var: float
    y_mean: float = 0.0
    _chol: np.ndarray | None = field(default=None, repr=False)
    _alpha: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.x.shape[0] == 0:
            return
        k = _se_kernel(self.x, self.x, self.length_scales, self.signal_var)
        k[np.diag_indices_from(k)] += self.noise_var
        self._chol = _chol_with_jitter(k, self.signal_var)
        resid = self.y - self.y_mean
        self._alpha = np.linalg.solve(
            self._chol.T, np.linalg.solve(self._chol, resid))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def predict(self, xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance at query points (q, d)."""
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        if self.n == 0:
            return (np.full(xq.shape[0], self.y_mean),
                    np.full(xq.shape[0], self.signal_var))
        ks = _se_kernel(xq, self.x, self.length_scales, self.signal_var)
        mu = self.y_mean + ks @ self._alpha
        v = np.linalg.solve(self._chol, ks.T)
        var = np.maximum(self.signal_var - np.sum(v * v, axis=0), 0.0)
        return mu, var


def _nlml_and_grad(theta, x, y):
    """Negative log marginal likelihood and gradient in log-parameters."""
    d = x.shape[1]
    ell = np.exp(theta[:d])
    signal_var = math.exp(theta[d])
    noise_var = math.exp(theta[d + 1])
    diff = x[:, None, :] - x[None, :, :]
    sq_per_dim = (diff / ell) ** 2
    kf = signal_var * np.exp(-0.5 * sq_per_dim.sum(axis=2))
    k = kf + noise_var * np.eye(len(x))
    try:
        chol = np.linalg.cholesky(k + 1e-12 * signal_var * np.eye(len(x)))
    except np.linalg.LinAlgError:
        return 1e12, np.zeros_like(theta)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
    nlml = (0.5 * float(y @ alpha) + np.log(np.diag(chol)).sum()
            + 0.5 * len(x) * math.log(2 * math.pi))
    kinv = np.linalg.solve(chol.T, np.linalg.solve(
        chol, np.eye(len(x))))
    w = np.outer(alpha, alpha) - kinv
    grad = np.empty_like(theta)
    for j in range(d):
        grad[j] = -0.5 * float(np.sum(w * (kf * sq_per_dim[:, :, j])))
    grad[d] = -0.5 * float(np.sum(w * kf))
    grad[d + 1] = -0.5 * float(np.trace(w)) * noise_var
    return nlml, grad


def gp_fit(trials, *, length_scales=None, signal_var=None, noise_var=None,
           fit=True, seed: int = 0, n_starts: int = 4) -> GPPosterior:
    """GP over unit-cube points of finite-objective trials.

    With kernel values given and fit=False they are used verbatim; otherwise
    length-scales and variances maximize the marginal likelihood from several
    gradient-ascent starts. An empty trial list yields the prior.
    """
    usable = [t for t in trials if math.isfinite(t.objective)]
    if not usable:
        d = 1 if not trials else len(np.asarray(trials[0].unit))
        ell = (np.full(d, 0.5) if length_scales is None
               else np.asarray(length_scales, dtype=np.float64))
        return GPPosterior(x=np.zeros((0, d)), y=np.zeros(0),
                           length_scales=ell,
                           signal_var=1.0 if signal_var is None
                           else float(signal_var),
                           noise_var=1e-6 if noise_var is None
                           else float(noise_var))
    x = np.array([np.asarray(t.unit, dtype=np.float64) for t in usable])
    y = np.array([t.objective for t in usable])
    d = x.shape[1]
    y_mean = float(y.mean())
    resid = y - y_mean
    vy = float(resid.var())

    if not fit:
        # Fixed-kernel path keeps the plain zero-mean closed form
        # mu = k*' K^-1 y; the fitted path centers on the trial average.
        if length_scales is None or signal_var is None or noise_var is None:
            raise ValueError("fit=False requires all kernel values")
        return GPPosterior(x=x, y=y,
                           length_scales=np.asarray(length_scales, float),
                           signal_var=float(signal_var),
                           noise_var=float(noise_var), y_mean=0.0)

    sv0 = max(vy, 1e-8)
    starts = [np.concatenate([np.full(d, math.log(0.5)),
                              [math.log(sv0), math.log(1e-4 * sv0 + 1e-10)]])]
    rng = derive_rng(seed, "hyperopt", "gpfit", len(usable))
    for _ in range(max(0, n_starts - 1)):
        starts.append(np.concatenate([
            np.log(rng.uniform(0.1, 2.0, size=d)),
            [math.log(sv0 * rng.uniform(0.3, 3.0)),
             math.log(sv0 * 10 ** rng.uniform(-6, -1) + 1e-10)]]))
    bounds = ([(math.log(1e-2), math.log(10.0))] * d
              + [(math.log(1e-8), math.log(max(sv0 * 1e3, 1e-6))),
                 (math.log(1e-10), math.log(max(sv0, 1e-8)))])
    best = None
    for x0 in starts:
        res = minimize(_nlml_and_grad, x0, args=(x, resid), jac=True,
                       method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 200})
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    return GPPosterior(x=x, y=y, length_scales=np.exp(theta[:d]),
                       signal_var=math.exp(theta[d]),
                       noise_var=math.exp(theta[d + 1]), y_mean=y_mean)


def expected_improvement(posterior: GPPosterior, best_so_far: float,
                         x) -> np.ndarray:
    """EI for minimization: E[max(best_so_far - f, 0)] under the posterior."""
    mu, var = posterior.predict(x)
    sigma = np.sqrt(var)
    improve = best_so_far - mu
    out = np.maximum(improve, 0.0)
    pos = sigma > 0
    z = improve[pos] / sigma[pos]
    phi = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    out[pos] = sigma[pos] * (z * ndtr(z) + phi)
    return out


def _lhs_point(space: SearchSpace, seed: int, index: int,
               n_init: int) -> np.ndarray:
    """Row `index` of a seed-determined Latin hypercube with n_init rows."""
    rng = derive_rng(seed, "hyperopt", "lhs")
    strata = np.column_stack([rng.permutation(n_init)
                              for _ in range(space.d)])
    offsets = rng.random((n_init, space.d))
    cube = (strata + offsets) / n_init
    return cube[index % n_init]


def propose_next(trials, space: SearchSpace, seed: int = 0, *,
                 n_init: int = 5, n_candidates: int = 4096) -> dict:
    """Next configuration to evaluate, in native units.

    The first n_init proposals fill the cube from a seeded Latin hypercube;
    later ones maximize expected improvement over a fresh random candidate
    grid with local gradient refinement from the best candidate. Integer
    dimensions round at the very end. Deterministic in (trials, seed).
    """
    t = len(trials)
    ok = [tr for tr in trials if tr.status == "ok"]
    if t < n_init or not ok:
        return space.from_unit(_lhs_point(space, seed, t, n_init))

    posterior = gp_fit(trials, seed=seed)
    incumbent = min(tr.objective for tr in ok)
    rng = derive_rng(seed, "hyperopt", "grid", t)
    grid = rng.random((n_candidates, space.d))
    ei = expected_improvement(posterior, incumbent, grid)
    start = grid[int(np.argmax(ei))]
    res = minimize(
        lambda u: -expected_improvement(posterior, incumbent,
                                        u[None, :])[0],
        start, method="L-BFGS-B", bounds=[(0.0, 1.0)] * space.d,
        options={"maxiter": 60})
    refined = res.x if -res.fun >= ei.max() else start
    return space.from_unit(refined)


@dataclass
class SearchResult:
    best: Trial
    trials: list[Trial]


def read_log(path) -> list[Trial]:
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trials.append(Trial.from_json(line))
    return trials


def run_search(evaluate, space: SearchSpace, budget: int = 50,
               seed: int = 0, *, n_init: int = 5, mode: str = "bo",
               log_path=None, resume: bool = False) -> SearchResult:
    """Sequential search loop returning the lowest-objective trial.

    evaluate(native) returns validation bits/phone; a raised training
    divergence or a non-finite return records the trial as diverged with a
    penalty objective (2 bits above the worst finite trial so far, 22 before
    any) so the surrogate avoids the region. With resume=True, trials
    already in log_path count toward the budget and seed the surrogate.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if mode not in ("bo", "random"):
        raise ValueError(f"unknown search mode {mode!r}")
    trials: list[Trial] = []
    if resume and log_path is not None:
        try:
            trials = read_log(log_path)
        except FileNotFoundError:
            trials = []
    log = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        while len(trials) < budget:
            if mode == "random":
                rng = derive_rng(seed, "hyperopt", "random", len(trials))
                native = space.from_unit(rng.random(space.d))
            else:
                native = propose_next(trials, space, seed, n_init=n_init)
            unit = space.to_unit(native)
            try:
                value = float(evaluate(native))
                status = "ok" if math.isfinite(value) else "diverged"
            except TrainingDivergedError:
                value, status = math.nan, "diverged"
            if status == "diverged":
                finite = [tr.objective for tr in trials
                          if tr.status == "ok"]
                value = (max(finite) if finite else 20.0) + 2.0
            trial = Trial(native=native, unit=unit, objective=value,
                          status=status)
            trials.append(trial)
            if log:
                log.write(trial.to_json() + "\n")
                log.flush()
    finally:
        if log:
            log.close()
    ok = [tr for tr in trials if tr.status == "ok"]
    if not ok:
        raise AllTrialsDivergedError(
            f"all {len(trials)} trials diverged")
    best = min(ok, key=lambda tr: tr.objective)
    return SearchResult(best=best, trials=trials)
