"""Doubly stochastic random times and copula-coupled pairs of them.

A time is the first date at which a non-decreasing cumulated intensity
``Lambda`` reaches an independent standard exponential threshold ``E``.  For
two times the thresholds are coupled through a copula on the survival scale:
``P(E1 > x, E2 > y) = C(exp(-x), exp(-y))``.

Two notions of "the time" are used:

* :func:`sample_time` caps at the horizon, ``inf {} = T``;
* :func:`first_crossing` returns the uncapped index (``T + 1`` when the
  threshold is never reached), which is what survival events such as
  ``{tau > T}`` are defined from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BISECTION_TOL = 1e-12
CLAMP_TOL = 1e-14


class CopulaError(ValueError):
    """Invalid copula parameters or evaluation outside the unit square."""


class CapabilityError(NotImplementedError):
    """Requested operation has no implementation for the given object."""


# ---------------------------------------------------------------------------
# Intensity paths and single times
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntensityPath:
    """Cumulated intensity ``Lambda_0..Lambda_T`` with ``Lambda_0 = 0``, non-decreasing."""

    values: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.values, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("intensity path must be a non-empty 1-d sequence")
        if lam[0] != 0.0:
            raise ValueError(f"intensity path must start at 0, got {lam[0]}")
        if np.any(np.diff(lam) < 0):
            raise ValueError("intensity path must be non-decreasing")
        if not np.all(np.isfinite(lam)):
            raise ValueError("intensity path must be finite")
        lam.setflags(write=False)
        object.__setattr__(self, "values", lam)

    @classmethod
    def linear(cls, rate: float, horizon: int) -> "IntensityPath":
        return cls(rate * np.arange(horizon + 1, dtype=float))

    @property
    def horizon(self) -> int:
        return self.values.size - 1

    def __getitem__(self, t):
        return self.values[t]


@dataclass(frozen=True)
class DoublyStochasticTime:
    """An intensity path together with one realised exponential threshold."""

    intensity: IntensityPath
    threshold: float

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")

    @property
    def horizon(self) -> int:
        return self.intensity.horizon

    def value(self) -> int:
        return sample_time(self.intensity, self.threshold)


def sample_time(intensity: IntensityPath, threshold: float) -> int:
    """First ``t`` with ``Lambda_t >= threshold``, or the horizon ``T`` if none."""
    hit = np.flatnonzero(intensity.values >= threshold)
    return int(hit[0]) if hit.size else intensity.horizon


def first_crossing(lam: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Uncapped crossing index for each row of ``lam`` (shape ``(n, T+1)``).

    Rows with no crossing get ``T + 1``.  ``lam`` need not be monotone; the
    first index where it reaches the threshold is returned.
    """
    lam = np.atleast_2d(lam)
    thresholds = np.asarray(thresholds, dtype=float).reshape(-1, 1)
    reached = lam >= thresholds
    idx = np.argmax(reached, axis=1)
    return np.where(reached.any(axis=1), idx, lam.shape[1])


def azema_survival(intensity: IntensityPath) -> np.ndarray:
    """Conditional survival probabilities ``G_t = exp(-Lambda_t)``."""
    return np.exp(-intensity.values)


def death_masses(intensity: IntensityPath) -> np.ndarray:
    """``P(tau = t | F) = G_{t-1} - G_t`` for ``t = 1..T``."""
    G = azema_survival(intensity)
    return G[:-1] - G[1:]


# ---------------------------------------------------------------------------
# Copulas
# ---------------------------------------------------------------------------

COPULA_KINDS = ("independence", "clayton", "frank")


@dataclass(frozen=True)
class Copula2:
    """Bivariate copula from a fixed family.

    ``theta`` must be positive for Clayton and non-zero for Frank; it is ignored
    for independence.
    """

    kind: str = "independence"
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in COPULA_KINDS:
            raise CopulaError(f"unknown copula kind {self.kind!r}; expected one of {COPULA_KINDS}")
        if self.kind == "clayton" and not self.theta > 0:
            raise CopulaError("clayton copula needs theta > 0")
        if self.kind == "frank" and (self.theta == 0 or not math.isfinite(self.theta)):
            raise CopulaError("frank copula needs a finite theta != 0")

    @classmethod
    def from_dict(cls, spec: dict) -> "Copula2":
        return cls(spec.get("kind", "independence"), float(spec.get("theta", 0.0)))

    def to_dict(self) -> dict:
        if self.kind == "independence":
            return {"kind": self.kind}
        return {"kind": self.kind, "theta": self.theta}

    @staticmethod
    def _check_unit(*arrays):
        for a in arrays:
            if np.any((a < 0) | (a > 1)) or np.any(np.isnan(a)):
                raise CopulaError("copula arguments must lie in [0, 1]")

    def cdf(self, u, v):
        """``C(u, v)``, vectorised."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        self._check_unit(u, v)
        if self.kind == "independence":
            return u * v
        th = self.theta
        if self.kind == "clayton":
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.expm1(-th * np.log(u))
                b = np.expm1(-th * np.log(v))
                out = np.exp(-np.log1p(a + b) / th)
            return np.where((u == 0) | (v == 0), 0.0, out)
        ratio = np.expm1(-th * u) * np.expm1(-th * v) / np.expm1(-th)
        return -np.log1p(ratio) / th

    def cond_cdf(self, u, v):
        """``dC/du (u, v)``: the law of the second coordinate given the first."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.kind == "independence":
            return np.broadcast_to(v, np.broadcast(u, v).shape).astype(float)
        th = self.theta
        if self.kind == "clayton":
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                a = np.expm1(-th * np.log(u))
                b = np.expm1(-th * np.log(v))
                out = np.exp(-(th + 1.0) * np.log(u) - (1.0 / th + 1.0) * np.log1p(a + b))
            out = np.where(v <= 0, 0.0, out)
            return np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0)
        ev = np.expm1(-th * v)
        out = np.exp(-th * u) * ev / (np.expm1(-th) + np.expm1(-th * u) * ev)
        return np.clip(out, 0.0, 1.0)

    def sample(self, n: int, rng: np.random.Generator, antithetic: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` pairs by the conditional-inverse method.

        The second coordinate solves ``dC/du(u1, v) = w`` by bisection to
        ``BISECTION_TOL``.  With ``antithetic`` the second half of the sample
        reuses the first half's driving uniforms reflected as ``1 - u``.
        """
        half = n // 2 if antithetic else n
        u1, w = open_uniform(rng, half), open_uniform(rng, half)
        if antithetic:
            u1 = np.concatenate([u1, 1.0 - u1])
            w = np.concatenate([w, 1.0 - w])
        return u1, self.conditional_inverse(u1, w)

    def conditional_inverse(self, u1: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Solve ``dC/du(u1, v) = w`` for ``v`` (vectorised bisection)."""
        if self.kind == "independence":
            return np.asarray(w, dtype=float)
        lo = np.zeros_like(u1, dtype=float)
        hi = np.ones_like(u1, dtype=float)
        iterations = int(math.ceil(math.log2(1.0 / BISECTION_TOL)))
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = self.cond_cdf(u1, mid) < w
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def sample_thresholds(
        self, n: int, rng: np.random.Generator, antithetic: bool = False
    ) -> tuple[np.ndarray, np.ndarray]:
        """Exponential thresholds ``E_k = -log U_k`` with survival copula ``C``."""
        u1, u2 = self.sample(n, rng, antithetic)
        return -np.log(u1), -np.log(u2)


def open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1), symmetric under ``u -> 1 - u``."""
    return rng.random(n) + 2.0**-54


# ---------------------------------------------------------------------------
# Two times
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointSurvival:
    """Two intensity paths on a common horizon coupled by a copula."""

    lambda1: IntensityPath
    lambda2: IntensityPath
    copula: Copula2 = field(default_factory=Copula2)

    def __post_init__(self):
        if self.lambda1.horizon != self.lambda2.horizon:
            raise ValueError("intensity paths must share a horizon")

    @property
    def horizon(self) -> int:
        return self.lambda1.horizon

    def _survival(self, lam: IntensityPath, s: int) -> float:
        if s == -1:
            return 1.0
        if not 0 <= s <= lam.horizon:
            raise ValueError(f"time index {s} outside -1..{lam.horizon}")
        return math.exp(-lam.values[s])

    def gamma(self, s: int, t: int) -> float:
        """``C(exp(-Lambda1_s), exp(-Lambda2_t))``; index ``-1`` means survival 1."""
        return float(self.copula.cdf(self._survival(self.lambda1, s), self._survival(self.lambda2, t)))


def joint_survival(js: JointSurvival, s: int, t: int) -> float:
    """Conditional probability that the first time exceeds ``s`` and the second exceeds ``t``."""
    return js.gamma(s, t)


@dataclass(frozen=True)
class PartitionProbs:
    """Conditional masses of the events that partition the space at time ``t``.

    ``g11``: both times beyond ``t``; ``g2[i]``: first beyond ``t``, second at
    ``i``; ``g3[i]``: first at ``i``, second beyond ``t``; ``g4[i, j]``: first
    at ``i``, second at ``j``.  Indices run over ``0..t``.
    """

    t: int
    g11: float
    g2: np.ndarray
    g3: np.ndarray
    g4: np.ndarray

    def total(self) -> float:
        return float(math.fsum([self.g11, *self.g2, *self.g3, *self.g4.ravel()]))

    def as_vector(self) -> np.ndarray:
        """Flattened in the order ``g11, g2, g3, g4`` (row-major)."""
        return np.concatenate([[self.g11], self.g2, self.g3, self.g4.ravel()])


def _clamp(x: float) -> float:
    if x < 0:
        if x < -CLAMP_TOL:
            raise ArithmeticError(f"negative partition mass {x}")
        return 0.0
    return x


def partition_probs(js: JointSurvival, t: int) -> PartitionProbs:
    """Masses of the time-``t`` partition from the joint survival function."""
    if not 0 <= t <= js.horizon:
        raise ValueError(f"t={t} outside 0..{js.horizon}")
    idx = range(-1, t + 1)
    G = {(a, b): js.gamma(a, b) for a in idx for b in idx}
    g11 = G[t, t]
    g2 = np.array([_clamp(G[t, i - 1] - G[t, i]) for i in range(t + 1)])
    g3 = np.array([_clamp(G[i - 1, t] - G[i, t]) for i in range(t + 1)])
    g4 = np.array(
        [
            [_clamp(G[i - 1, j - 1] - G[i, j - 1] - G[i - 1, j] + G[i, j]) for j in range(t + 1)]
            for i in range(t + 1)
        ]
    )
    return PartitionProbs(t, g11, g2, g3, g4)


@dataclass(frozen=True)
class PartitionCheck:
    """Outcome of comparing empirical frequencies with :func:`partition_probs`."""

    max_abs_deviation: float
    max_z: float  # deviation in units of the binomial standard error
    n: int


def empirical_partition_check(
    js: JointSurvival, t: int, n_samples: int, rng: np.random.Generator
) -> PartitionCheck:
    """Sample threshold pairs, classify them into the time-``t`` cells and compare."""
    probs = partition_probs(js, t)
    e1, e2 = js.copula.sample_thresholds(n_samples, rng)
    # crossing index beyond t is pooled into the cell "t + 1"
    sigma = np.minimum(first_crossing(np.broadcast_to(js.lambda1.values[: t + 1], (1, t + 1)), e1), t + 1)
    tau = np.minimum(first_crossing(np.broadcast_to(js.lambda2.values[: t + 1], (1, t + 1)), e2), t + 1)
    counts = np.zeros((t + 2, t + 2))
    np.add.at(counts, (sigma, tau), 1.0)
    freq = counts / n_samples
    observed = np.concatenate([[freq[t + 1, t + 1]], freq[t + 1, : t + 1], freq[: t + 1, t + 1],
                               freq[: t + 1, : t + 1].ravel()])
    expected = probs.as_vector()
    dev = np.abs(observed - expected)
    se = np.sqrt(expected * (1.0 - expected) / n_samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, dev / se, np.where(dev > 0, np.inf, 0.0))
    return PartitionCheck(float(dev.max()), float(z.max()), n_samples)
