"""Discrete-time affine pricing under the composed measure.

The state is ``Z = (X, Y)``: ``Y`` is public and drives the stock, ``X`` is
private and feeds the intensities.  A model supplies

* ``A_Q(v), B_Q(v)``: one-step transform of ``Y`` under the pricing measure,
* ``alpha(u), beta(u), gamma(u)``: transform of ``X_t`` given ``(Y_t, X_{t-1})``
  under the physical measure.

Exponential-affine claims of the form
``exp(sum_{i=t+1}^T kappa1_i . X_i + kappa2_i . Y_i)`` are then valued by a
backward recursion in ``(phi, psi1, psi2)``.  The claims priced here
(survival claims, two-time blocks) are all instances of this form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

RECURSION_TOL = 1e-12


class AffineDomainError(ArithmeticError):
    """A transform returned a non-finite value during the recursion."""


class ConfigError(ValueError):
    """A model description violates a structural requirement."""


# ---------------------------------------------------------------------------
# Model descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineModelSpec:
    """Abstract affine model given by its transform functions.

    Each callable takes a numpy vector and returns a float (``A``, ``A_Q``,
    ``alpha``) or a vector (``B``, ``B_Q``, ``beta``, ``gamma``).  ``A``/``B``
    act on the full state, ``A_Q``/``B_Q`` on the ``Y`` block only.
    """

    d1: int
    d2: int
    A: Callable
    B: Callable
    A_Q: Callable
    B_Q: Callable
    alpha: Callable
    beta: Callable
    gamma: Callable
    z0: np.ndarray

    @property
    def dim(self) -> int:
        return self.d1 + self.d2

    def split(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        return z[..., : self.d1], z[..., self.d1 :]


@dataclass(frozen=True)
class GaussianFactorModel:
    """Gaussian VAR(1) factor model ``Z_t = mu + theta Z_{t-1} + eps_t``.

    ``eps_t ~ N(0, sigma)``.  Under the pricing measure only the drift of the
    ``Y`` block changes, to ``mu_q``.  Two structural conditions make the
    conditional split of ``X_t`` given ``(Y_t, X_{t-1})`` affine in exactly the
    required variables:

    * ``Y`` is autonomous: ``theta_YX = 0``;
    * ``theta_XY = K theta_YY`` with ``K = sigma_XY sigma_YY^+`` so that ``Y_{t-1}``
      drops out once ``Y_t`` is known.

    :meth:`consistent_coupling` returns the ``theta_XY`` block satisfying the second.
    """

    d1: int
    d2: int
    mu: np.ndarray
    mu_q: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray
    z0: np.ndarray
    tol: float = 1e-10
    _derived: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = self.d1 + self.d2
        if self.d1 < 0 or self.d2 < 0 or d == 0:
            raise ConfigError("factor dimensions must be non-negative with positive sum")
        mu = _vec(self.mu, d, "mu")
        mu_q = _vec(self.mu_q, self.d2, "mu_q")
        theta = _mat(self.theta, d, "theta")
        sigma = _mat(self.sigma, d, "sigma")
        z0 = _vec(self.z0, d, "z0")
        if not np.allclose(sigma, sigma.T, atol=self.tol):
            raise ConfigError("sigma must be symmetric")
        if np.linalg.eigvalsh(0.5 * (sigma + sigma.T)).min() < -self.tol:
            raise ConfigError("sigma must be positive semidefinite")
        for name, arr in (("mu", mu), ("mu_q", mu_q), ("theta", theta), ("sigma", sigma), ("z0", z0)):
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)
        x, y = slice(0, self.d1), slice(self.d1, d)
        if np.abs(theta[y, x]).max(initial=0.0) > self.tol:
            raise ConfigError("the public block must not load on the private block (theta_YX != 0)")
        s_xy, s_yy, s_xx = sigma[x, y], sigma[y, y], sigma[x, x]
        K = s_xy @ np.linalg.pinv(s_yy) if self.d2 else np.zeros((self.d1, 0))
        if np.abs(theta[x, y] - K @ theta[y, y]).max(initial=0.0) > self.tol:
            raise ConfigError(
                "theta_XY must equal K theta_YY with K = sigma_XY pinv(sigma_YY); "
                "use GaussianFactorModel.consistent_coupling"
            )
        cond_cov = s_xx - K @ s_xy.T
        derived = {
            "K": K,
            "cond_mean": mu[x] - K @ mu[y],
            "cond_cov": 0.5 * (cond_cov + cond_cov.T),
            "theta_xx": theta[x, x],
            "theta_yy": theta[y, y],
            "sigma_yy": s_yy,
        }
        for arr in derived.values():
            arr.setflags(write=False)
        object.__setattr__(self, "_derived", derived)

    # construction helpers --------------------------------------------------

    @staticmethod
    def consistent_coupling(sigma, theta_yy, d1: int) -> np.ndarray:
        """The ``theta_XY`` block ``sigma_XY pinv(sigma_YY) theta_YY``."""
        sigma = np.asarray(sigma, dtype=float)
        s_xy = sigma[:d1, d1:]
        s_yy = sigma[d1:, d1:]
        return s_xy @ np.linalg.pinv(s_yy) @ np.asarray(theta_yy, dtype=float)

    @classmethod
    def from_dict(cls, spec: dict) -> "GaussianFactorModel":
        return cls(
            d1=int(spec["d1"]),
            d2=int(spec["d2"]),
            mu=spec["mu"],
            mu_q=spec["mu_q"],
            theta=spec["theta"],
            sigma=spec["sigma"],
            z0=spec["z0"],
        )

    def to_dict(self) -> dict:
        return {
            "kind": "gaussian",
            "d1": self.d1,
            "d2": self.d2,
            "mu": self.mu.tolist(),
            "mu_q": self.mu_q.tolist(),
            "theta": self.theta.tolist(),
            "sigma": self.sigma.tolist(),
            "z0": self.z0.tolist(),
        }

    # derived blocks ---------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.d1 + self.d2

    @property
    def K(self) -> np.ndarray:
        return self._derived["K"]

    @property
    def cond_mean(self) -> np.ndarray:
        return self._derived["cond_mean"]

    @property
    def cond_cov(self) -> np.ndarray:
        return self._derived["cond_cov"]

    @property
    def theta_xx(self) -> np.ndarray:
        return self._derived["theta_xx"]

    @property
    def theta_yy(self) -> np.ndarray:
        return self._derived["theta_yy"]

    @property
    def sigma_yy(self) -> np.ndarray:
        return self._derived["sigma_yy"]

    @property
    def mu_y(self) -> np.ndarray:
        return self.mu[self.d1 :]

    def split(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        return z[..., : self.d1], z[..., self.d1 :]

    # transforms -------------------------------------------------------------

    def A(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ self.mu + 0.5 * u @ self.sigma @ u)

    def B(self, u) -> np.ndarray:
        return self.theta.T @ np.asarray(u, dtype=float)

    def A_Q(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ self.mu_q + 0.5 * v @ self.sigma_yy @ v)

    def B_Q(self, v) -> np.ndarray:
        return self.theta_yy.T @ np.asarray(v, dtype=float)

    def alpha(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ self.cond_mean + 0.5 * u @ self.cond_cov @ u)

    def beta(self, u) -> np.ndarray:
        return self.theta_xx.T @ np.asarray(u, dtype=float)

    def gamma(self, u) -> np.ndarray:
        return self.K.T @ np.asarray(u, dtype=float)

    def as_spec(self) -> AffineModelSpec:
        return AffineModelSpec(
            self.d1, self.d2, self.A, self.B, self.A_Q, self.B_Q,
            self.alpha, self.beta, self.gamma, self.z0,
        )


def _vec(x, n: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1)
    if arr.size != n:
        raise ConfigError(f"{name} must have length {n}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    return arr


def _mat(x, n: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.shape != (n, n):
        raise ConfigError(f"{name} must be {n}x{n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class StockSpec:
    """Discounted stock ``S_t = exp(a0 t + a . Y_t)``."""

    a0: float
    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a0", float(self.a0))

    def price(self, t, y) -> np.ndarray:
        return np.exp(self.a0 * np.asarray(t) + np.asarray(y) @ self.a)


@dataclass(frozen=True)
class IntensitySpec:
    """Cumulated intensity ``Lambda_t = b0 + sum_{s<=t} (b . X_s + c . Y_s)``.

    ``b0 = None`` means "choose ``b0`` so that ``Lambda`` starts at zero".
    """

    b: np.ndarray
    c: np.ndarray
    b0: float | None = None

    def __post_init__(self):
        for name in ("b", "c"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zero(cls, d1: int, d2: int) -> "IntensitySpec":
        return cls(np.zeros(d1), np.zeros(d2), 0.0)

    def increment(self, x, y) -> np.ndarray:
        return np.asarray(x) @ self.b + np.asarray(y) @ self.c

    def offset(self, z0, d1: int) -> float:
        z0 = np.asarray(z0, dtype=float)
        if self.b0 is not None:
            return float(self.b0)
        return -float(self.increment(z0[:d1], z0[d1:]))

    def check_start(self, z0, d1: int, tol: float = 1e-12) -> None:
        z0 = np.asarray(z0, dtype=float)
        lam0 = self.offset(z0, d1) + float(self.increment(z0[:d1], z0[d1:]))
        if abs(lam0) > tol:
            raise ConfigError(f"intensity does not start at zero (Lambda_0 = {lam0})")

    def scaled(self, factor: float) -> "IntensitySpec":
        b0 = None if self.b0 is None else self.b0 * factor
        return IntensitySpec(self.b * factor, self.c * factor, b0)

    def __add__(self, other: "IntensitySpec") -> "IntensitySpec":
        b0 = None if (self.b0 is None or other.b0 is None) else self.b0 + other.b0
        return IntensitySpec(self.b + other.b, self.c + other.c, b0)


# ---------------------------------------------------------------------------
# Martingale validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MartingaleReport:
    passed: bool
    drift_residual: float  # A_Q(a) + a0
    loading_residual: np.ndarray  # B_Q(a) - a
    tol: float

    @property
    def max_residual(self) -> float:
        return max(abs(self.drift_residual), float(np.abs(self.loading_residual).max(initial=0.0)))


def validate_martingale(model, stock: StockSpec, tol: float = 1e-12) -> MartingaleReport:
    """Check ``A_Q(a) = -a0`` and ``B_Q(a) = a``, i.e. the discounted stock is a martingale."""
    drift = model.A_Q(stock.a) + stock.a0
    loading = np.asarray(model.B_Q(stock.a)) - stock.a
    ok = abs(drift) <= tol and bool(np.all(np.abs(loading) <= tol))
    return MartingaleReport(ok, float(drift), loading, tol)


# ---------------------------------------------------------------------------
# Recursion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KappaSchedule:
    """Per-date coefficients ``kappa_i = (kappa1_i, kappa2_i)`` for ``i = t0+1..T``."""

    t0: int
    kappa1: np.ndarray  # shape (T - t0, d1)
    kappa2: np.ndarray  # shape (T - t0, d2)

    def __post_init__(self):
        k1 = np.atleast_2d(np.asarray(self.kappa1, dtype=float))
        k2 = np.atleast_2d(np.asarray(self.kappa2, dtype=float))
        if k1.shape[0] != k2.shape[0]:
            raise ValueError("kappa blocks must have the same number of dates")
        if k1.shape[0] < 1:
            raise ValueError("schedule must cover at least one date")
        object.__setattr__(self, "kappa1", k1)
        object.__setattr__(self, "kappa2", k2)

    @property
    def horizon(self) -> int:
        return self.t0 + self.kappa1.shape[0]

    def at(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if not self.t0 < i <= self.horizon:
            raise IndexError(f"date {i} outside {self.t0 + 1}..{self.horizon}")
        return self.kappa1[i - self.t0 - 1], self.kappa2[i - self.t0 - 1]

    @classmethod
    def build(cls, t0: int, T: int, rule: Callable[[int], tuple]) -> "KappaSchedule":
        """Assemble from ``rule(i) -> (kappa1_i, kappa2_i)`` for ``i = t0+1..T``."""
        pairs = [rule(i) for i in range(t0 + 1, T + 1)]
        return cls(t0, np.array([p[0] for p in pairs], dtype=float),
                   np.array([p[1] for p in pairs], dtype=float))


@dataclass(frozen=True)
class RecursionTable:
    """Output of the backward recursion on ``t0+1..T``.

    ``phi[i]``, ``psi1[i]``, ``psi2[i]`` are indexed by ``i - t0 - 1``; use
    :meth:`at` for date-based access.
    """

    t0: int
    T: int
    phi: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    schedule: KappaSchedule

    def at(self, i: int) -> tuple[float, np.ndarray, np.ndarray]:
        k = i - self.t0 - 1
        return float(self.phi[k]), self.psi1[k], self.psi2[k]

    def Phi(self, t: int | None = None) -> float:
        """``sum_{i=t+1}^T phi(i)``; ``t`` defaults to ``t0``."""
        t = self.t0 if t is None else t
        return math.fsum(self.phi[t - self.t0 :])

    def value(self, z_t, d1: int, log: bool = False) -> float:
        """``exp(Phi(t0, T) + psi(t0+1) . z_t)``."""
        z_t = np.asarray(z_t, dtype=float)
        _, p1, p2 = self.at(self.t0 + 1)
        out = self.Phi() + float(p1 @ z_t[:d1]) + float(p2 @ z_t[d1:])
        return out if log else math.exp(out)


def _step(model, u: np.ndarray, v: np.ndarray, i: int):
    g = np.asarray(model.gamma(u), dtype=float)
    w = v + g
    phi = model.alpha(u) + model.A_Q(w)
    psi1 = np.asarray(model.beta(u), dtype=float)
    psi2 = np.asarray(model.B_Q(w), dtype=float)
    if not (math.isfinite(phi) and np.all(np.isfinite(psi1)) and np.all(np.isfinite(psi2))):
        raise AffineDomainError(
            f"transform not finite at date {i} with u={u.tolist()}, v={v.tolist()}"
        )
    return phi, psi1, psi2


def run_recursion(model, schedule: KappaSchedule) -> RecursionTable:
    """Backward recursion for ``E[exp(sum_i kappa1_i.X_i + kappa2_i.Y_i) | Z_t0]``.

    At the terminal date the arguments are ``kappa_T`` itself; for earlier
    dates ``u(i) = psi1(i+1) + kappa1_i`` and ``v(i) = psi2(i+1) + kappa2_i``.
    Each step uses ``phi = alpha(u) + A_Q(v + gamma(u))``,
    ``psi1 = beta(u)``, ``psi2 = B_Q(v + gamma(u))``.
    """
    t0, T = schedule.t0, schedule.horizon
    n = T - t0
    phi = np.zeros(n)
    psi1 = np.zeros((n, model.d1))
    psi2 = np.zeros((n, model.d2))
    nxt1 = np.zeros(model.d1)
    nxt2 = np.zeros(model.d2)
    for i in range(T, t0, -1):
        k1, k2 = schedule.at(i)
        u, v = nxt1 + k1, nxt2 + k2
        f, p1, p2 = _step(model, u, v, i)
        k = i - t0 - 1
        phi[k], psi1[k], psi2[k] = f, p1, p2
        nxt1, nxt2 = p1, p2
    return RecursionTable(t0, T, phi, psi1, psi2, schedule)


@dataclass(frozen=True)
class VerifierReport:
    max_residual: float
    passed: bool


def verify_recursion(model, table: RecursionTable, tol: float = RECURSION_TOL) -> VerifierReport:
    """Re-evaluate each recursion relation from the stored table and report the worst residual."""
    worst = 0.0
    for i in range(table.T, table.t0, -1):
        k1, k2 = table.schedule.at(i)
        if i == table.T:
            u, v = k1, k2
        else:
            _, n1, n2 = table.at(i + 1)
            u, v = n1 + k1, n2 + k2
        w = v + model.gamma(u)
        phi, p1, p2 = table.at(i)
        res = [
            abs(phi - (model.alpha(u) + model.A_Q(w))),
            float(np.abs(p1 - model.beta(u)).max(initial=0.0)),
            float(np.abs(p2 - model.B_Q(w)).max(initial=0.0)),
        ]
        worst = max(worst, *res)
    return VerifierReport(worst, worst <= tol)


# ---------------------------------------------------------------------------
# Schedules for the priced claims
# ---------------------------------------------------------------------------


def survival_schedule(stock: StockSpec, intensity: IntensitySpec, t: int, T: int, mode: str) -> KappaSchedule:
    """Coefficients of ``S_T exp(-(Lambda_T - Lambda_t))`` (strict) or
    ``S_T exp(-(Lambda_{T-1} - Lambda_t))`` (lagged)."""
    if mode not in ("strict", "lagged"):
        raise ValueError(f"mode must be 'strict' or 'lagged', got {mode!r}")
    b, c, a = intensity.b, intensity.c, stock.a

    def rule(i):
        if i < T:
            return -b, -c
        if mode == "strict":
            return -b, a - c
        return np.zeros_like(b), a

    return KappaSchedule.build(t, T, rule)


def two_time_schedule(
    stock: StockSpec, int1: IntensitySpec, int2: IntensitySpec, t: int, s: int, T: int, mode: str
) -> KappaSchedule:
    """Coefficients of ``S_T exp(-dLambda1_T - dLambda2_s)`` (unprimed) or
    ``S_T exp(-dLambda1_s - dLambda2_T)`` (primed), increments measured from ``t``."""
    if mode not in ("unprimed", "primed"):
        raise ValueError(f"mode must be 'unprimed' or 'primed', got {mode!r}")
    if not t <= s < T:
        raise ValueError(f"need t <= s < T, got t={t}, s={s}, T={T}")
    long, short = (int1, int2) if mode == "unprimed" else (int2, int1)
    a = stock.a

    def rule(i):
        if i == T:
            return -long.b, a - long.c
        if i > s:
            return -long.b, -long.c
        return -long.b - short.b, -long.c - short.c

    return KappaSchedule.build(t, T, rule)


def joint_survival_schedule(
    stock: StockSpec, int1: IntensitySpec, int2: IntensitySpec, t: int, s: int
) -> KappaSchedule:
    """Coefficients of ``S_s exp(-dLambda1_{s-1} - dLambda2_{s-1})`` for ``t < s``."""
    if not t < s:
        raise ValueError(f"need t < s, got t={t}, s={s}")
    a = stock.a
    both_b, both_c = -int1.b - int2.b, -int1.c - int2.c

    def rule(i):
        if i == s:
            return np.zeros_like(both_b), a
        return both_b, both_c

    return KappaSchedule.build(t, s, rule)


def _check_time(t: int, T: int) -> None:
    if not 0 <= t < T:
        raise ValueError(f"need 0 <= t < T, got t={t}, T={T}")


def price_from_schedule(model, stock: StockSpec, schedule: KappaSchedule, z_t) -> float:
    """``exp(a0 T + Phi(t, T) + psi(t+1) . z_t)`` for a given schedule."""
    table = run_recursion(model, schedule)
    return math.exp(stock.a0 * schedule.horizon + table.value(z_t, model.d1, log=True))


def price_survival_claim(
    model, stock: StockSpec, intensity: IntensitySpec, t: int, T: int, z_t, mode: str = "strict"
) -> float:
    """Value at ``t`` of ``S_T`` paid on survival past ``T`` (strict) or past ``T-1`` (lagged),
    given survival past ``t``."""
    _check_time(t, T)
    return price_from_schedule(model, stock, survival_schedule(stock, intensity, t, T, mode), z_t)


def price_two_time_block(
    model,
    stock: StockSpec,
    int1: IntensitySpec,
    int2: IntensitySpec,
    t: int,
    s: int,
    T: int,
    z_t,
    mode: str = "unprimed",
) -> float:
    """``e^{L1_t + L2_t} E[S_T e^{-L1_T - L2_s} | t]`` (unprimed) or the version with
    the roles of the two intensities swapped (primed), for conditionally independent times."""
    _check_time(t, T)
    return price_from_schedule(model, stock, two_time_schedule(stock, int1, int2, t, s, T, mode), z_t)


def price_joint_survival_stock(
    model, stock: StockSpec, int1: IntensitySpec, int2: IntensitySpec, t: int, s: int, z_t
) -> float:
    """``e^{L1_t + L2_t} E[S_s e^{-L1_{s-1} - L2_{s-1}} | t]``."""
    return price_from_schedule(model, stock, joint_survival_schedule(stock, int1, int2, t, s), z_t)


# ---------------------------------------------------------------------------
# Default model
# ---------------------------------------------------------------------------


def default_model() -> tuple[GaussianFactorModel, StockSpec, IntensitySpec, IntensitySpec]:
    """Two private factors (surrender, mortality) and one public log-stock factor.

    Returns ``(model, stock, surrender_intensity, mortality_intensity)``.  The
    public factor is a random walk whose pricing drift makes the stock a
    martingale; both intensities start at zero.

    Through the coupling ``theta_XY = K theta_YY`` each private factor inherits
    the random-walk level of ``Y`` with loading ``K / (1 - theta_XX)``.  The
    intensities' ``c`` loadings offset that, leaving a net stock sensitivity of
    -0.02 for surrender and 0 for mortality, so that increments stay positive
    on all but a negligible fraction of paths.
    """
    sig_y = 0.05
    sd = np.array([0.004, 0.001, sig_y])
    corr = np.array([[1.0, 0.3, -0.4], [0.3, 1.0, -0.2], [-0.4, -0.2, 1.0]])
    sigma = corr * np.outer(sd, sd)
    level = np.array([0.03, 0.01])
    persistence = np.array([0.5, 0.5])
    theta = np.zeros((3, 3))
    theta[0, 0], theta[1, 1] = persistence
    theta[2, 2] = 1.0
    theta[:2, 2:] = GaussianFactorModel.consistent_coupling(sigma, theta[2:, 2:], 2)
    mu = np.concatenate([(1 - persistence) * level, [0.004]])
    mu_q = np.array([-0.5 * sig_y**2])
    z0 = np.array([0.03, 0.01, 0.0])
    model = GaussianFactorModel(2, 1, mu, mu_q, theta, sigma, z0)
    inherited = model.K[:, 0] / (1 - persistence)
    stock = StockSpec(0.0, [1.0])
    surrender = IntensitySpec([1.0, 0.0], [-inherited[0] - 0.02])
    mortality = IntensitySpec([0.0, 1.0], [-inherited[1]])
    return model, stock, surrender, mortality
