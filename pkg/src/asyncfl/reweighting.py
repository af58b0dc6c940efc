"""Reweighted client updates and the theory constants they induce.

A client that ran a random number E of local steps (clipped at K) reports
its progress divided by a weight alpha so that slow and fast clients
contribute equally in expectation.  Two variants exist:

* "stochastic": alpha = P(E > 0) * (E ^ K), using the realized step count;
* "deterministic": alpha = E[E ^ K], a per-client constant

where ``^`` denotes min.  The moments of the clipped step-count
distribution also determine the per-client constants (a_i, b) entering the
convergence rate and the round-complexity bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoProgressContact
from .problems import check_same_dim, check_vector

STOCHASTIC = "stochastic"
DETERMINISTIC = "deterministic"
MODES = (STOCHASTIC, DETERMINISTIC)


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown reweight mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass(frozen=True)
class StepCountDistribution:
    """Probability mass of the clipped local-step count on {0, ..., K}.

    Moments are computed once by exact summation over the support; closed
    forms are used only as cross-checks in tests.
    """

    pmf: np.ndarray
    provenance: str = "custom"

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.ndim != 1 or len(pmf) < 2:
            raise ValueError("pmf must be a 1-D array over {0, ..., K} with K >= 1")
        if np.any(pmf < 0):
            raise ValueError("pmf entries must be >= 0")
        if abs(pmf.sum() - 1.0) > 1e-12:
            raise ValueError(f"pmf sums to {pmf.sum()!r}, expected 1 within 1e-12")
        object.__setattr__(self, "pmf", pmf)
        support = np.arange(len(pmf))
        object.__setattr__(self, "p_pos", float(pmf[1:].sum()))
        object.__setattr__(self, "m1", float(np.dot(pmf, support)))
        object.__setattr__(self, "m2", float(np.dot(pmf, support**2)))
        object.__setattr__(self, "inv_pos", float(np.dot(pmf[1:], 1.0 / support[1:])))

    # moment attributes are filled in __post_init__
    p_pos: float = field(init=False, default=0.0)
    m1: float = field(init=False, default=0.0)
    m2: float = field(init=False, default=0.0)
    inv_pos: float = field(init=False, default=0.0)

    @property
    def max_steps(self) -> int:
        return len(self.pmf) - 1

    def variance(self) -> float:
        return self.m2 - self.m1**2

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(len(self.pmf), size=size, p=self.pmf)

    @classmethod
    def point_mass(cls, k: int, max_steps: int) -> "StepCountDistribution":
        if not 0 <= k <= max_steps:
            raise ValueError("point mass outside support")
        pmf = np.zeros(max_steps + 1)
        pmf[k] = 1.0
        return cls(pmf, provenance="custom")

    @classmethod
    def empirical(cls, counts: np.ndarray, max_steps: int) -> "StepCountDistribution":
        """Estimate from observed clipped counts; warm-started at K.

        Experimental: the analysis assumes the distribution is known, this
        helper exists for the simulator's time-based mode.
        """
        counts = np.asarray(counts, dtype=int)
        pmf = np.zeros(max_steps + 1)
        pmf[max_steps] = 1.0  # prior: full K steps
        if len(counts):
            hist = np.bincount(np.clip(counts, 0, max_steps), minlength=max_steps + 1)
            pmf = (pmf + hist) / (1 + len(counts))
        return cls(pmf, provenance="empirical")

    def to_table(self) -> str:
        lines = [f"{k} {float(self.pmf[k])!r}" for k in range(len(self.pmf))]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_table(cls, text: str, provenance: str = "custom") -> "StepCountDistribution":
        rows = [line.split() for line in text.strip().splitlines()]
        pmf = np.zeros(len(rows))
        for k_str, p_str in rows:
            pmf[int(k_str)] = float(p_str)
        return cls(pmf, provenance=provenance)


def clipped_geometric(lam: float, max_steps: int) -> StepCountDistribution:
    """Geometric(lam) step count on {1, 2, ...}, clipped at ``max_steps``.

    pmf[k] = lam (1-lam)^(k-1) for 1 <= k < K and pmf[K] = (1-lam)^(K-1).
    """
    if not 0 < lam <= 1:
        raise ValueError(f"lam must lie in (0, 1], got {lam}")
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    pmf = np.zeros(max_steps + 1)
    for k in range(1, max_steps):
        pmf[k] = lam * (1.0 - lam) ** (k - 1)
    pmf[max_steps] = (1.0 - lam) ** (max_steps - 1)
    return StepCountDistribution(pmf, provenance="exact-geometric")


def alpha(mode: str, dist: StepCountDistribution, realized_steps: int | None = None) -> float:
    """Reweighting divisor for a client contact.

    Stochastic mode needs the realized step count and signals
    NoProgressContact at zero steps (the caller sends the anchor unchanged).
    """
    _check_mode(mode)
    if mode == DETERMINISTIC:
        if dist.m1 <= 0:
            raise ValueError("deterministic mode needs E[E^K] > 0")
        return dist.m1
    if realized_steps is None:
        raise ValueError("stochastic mode needs the realized step count")
    if realized_steps < 0:
        raise ValueError("realized step count must be >= 0")
    clipped = min(realized_steps, dist.max_steps)
    if clipped == 0:
        raise NoProgressContact()
    if dist.p_pos <= 0:
        raise ValueError("stochastic mode needs P(E > 0) > 0")
    return dist.p_pos * clipped


def unbiased_update(w_init: np.ndarray, w_local: np.ndarray, alpha_value: float) -> np.ndarray:
    """Reweighted payload: w_init + (w_local - w_init) / alpha."""
    w_init = check_vector(w_init)
    w_local = check_vector(w_local)
    check_same_dim(w_init, w_local)
    if alpha_value <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha_value}")
    return w_init + (w_local - w_init) / alpha_value


def stopped_sum_mean_var(
    mode: str, dist: StepCountDistribution, y_mean: float, y_var: float
) -> tuple[float, float]:
    """Mean and variance of the reweighted stopped sum of i.i.d. terms.

    The estimator is 1{E>0}/alpha * sum_{q<=E^K} Y_q.  Its mean is y_mean in
    both modes; the variance comes from the cached distribution moments.
    """
    _check_mode(mode)
    if y_var < 0:
        raise ValueError("y_var must be >= 0")
    if mode == STOCHASTIC:
        p = dist.p_pos
        if p <= 0:
            raise ValueError("stochastic mode needs P(E > 0) > 0")
        var = (y_mean**2 * p * (1.0 - p) + y_var * dist.inv_pos) / p**2
    else:
        if dist.m1 <= 0:
            raise ValueError("deterministic mode needs E[E^K] > 0")
        var = y_mean**2 * dist.variance() / dist.m1**2 + y_var / dist.m1
    return y_mean, var


def theorem_constants(
    mode: str, dists: list[StepCountDistribution], max_steps: int
) -> tuple[np.ndarray, float]:
    """Per-client constants a_i and the worst-case constant b of the rate bound."""
    _check_mode(mode)
    if not dists:
        raise ValueError("need at least one distribution")
    if any(d.max_steps != max_steps for d in dists):
        raise ValueError("all distributions must share the same clip K")
    k2 = float(max_steps) ** 2
    a = np.empty(len(dists))
    if mode == STOCHASTIC:
        for i, d in enumerate(dists):
            if d.p_pos <= 0:
                raise ValueError("stochastic mode needs P(E > 0) > 0 for every client")
            a[i] = (d.p_pos / k2 + d.inv_pos) / d.p_pos**2
        b = max(1.0 / d.p_pos for d in dists)
    else:
        for i, d in enumerate(dists):
            if d.m1 <= 0:
                raise ValueError("deterministic mode needs E[E^K] > 0 for every client")
            a[i] = 1.0 / d.m1 + d.m2 / (k2 * d.m1)
        b = max(d.m2 / d.m1 for d in dists)
    return a, b


def theorem_step_size(
    mode: str,
    dists: list[StepCountDistribution],
    max_steps: int,
    smoothness: float,
    s: int,
    dissimilarity_b: float = 1.0,
) -> float:
    """Largest step size allowed by the rate bound: 1 / (20 B^2 b K L s)."""
    if smoothness <= 0 or not np.isfinite(smoothness):
        raise ValueError("needs a positive finite smoothness constant")
    if s < 1:
        raise ValueError("s must be >= 1")
    _, b = theorem_constants(mode, dists, max_steps)
    return 1.0 / (20.0 * dissimilarity_b**2 * b * max_steps * smoothness * s)


def complexity_bound(
    r0: float, b_term: float, e_term: float, d_term: float, epsilon: float
) -> float:
    """Rounds needed to reach epsilon given error bound r0/(eta T) + b eta + e eta^2."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    for name, value in (("r0", r0), ("b_term", b_term), ("e_term", e_term), ("d_term", d_term)):
        if value < 0:
            raise ValueError(f"{name} must be >= 0")
    return (
        36.0 * b_term * r0 / epsilon**2
        + 15.0 * r0 * np.sqrt(e_term) / epsilon**1.5
        + 3.0 * d_term * r0 / epsilon
    )
