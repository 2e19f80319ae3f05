"""Insurance-finance arbitrage on finite spaces.

An insurer sells ``n`` copies of a contract issued at ``t`` for premium ``p_t``
and hedges with the traded assets.  Benefits of different copies are
conditionally independent given the joint information ``G_t v F_T``, so by the
law of large numbers the average benefit converges to ``E_P[X_t | G_t v F_T]``.

``check_nifa`` searches for a martingale measure ``Q ~ P`` under which every
premium is at most the composed value of its benefit (no arbitrage).
``check_ifa`` looks for an issue date where the worst premium beats the
superhedging price of the limiting benefit on a set of positive probability,
and returns a certificate with the hedge; ``construct_arbitrage`` turns such a
certificate into simulated profit-and-loss.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from . import finite_space as fs

ZERO = Fraction(0)
HALVING_DEPTH = 24


class InputError(ValueError):
    """Missing or malformed inputs to a profit-and-loss computation."""


class AdaptednessError(ValueError):
    """A trading strategy uses information not yet available."""


class AssumptionError(ValueError):
    """A limit theorem is applied outside its assumptions (e.g. infinite variance)."""


# ---------------------------------------------------------------------------
# Market description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InsuranceMarket:
    """A finite financial market plus insurance contracts.

    ``private[t]`` is the insurer's information at ``t`` (must refine the market
    filtration).  ``benefits[t]`` and ``premiums[t]`` describe the contract issued
    at ``t < T``; premiums must be ``private[t]``-measurable.  The financial
    market's reference measure is the physical measure.
    """

    financial: fs.FiniteMarket
    private: tuple
    benefits: Mapping[int, fs.FiniteRV]
    premiums: Mapping[int, fs.FiniteRV]

    def __post_init__(self):
        if self.financial.reference is None:
            raise fs.StructuralError("insurance market needs a physical (reference) measure")
        F = self.financial.filtration
        private = tuple(self.private)
        if len(private) != len(F.partitions):
            raise fs.StructuralError("one private partition per date is required")
        for t, (G, Ft) in enumerate(zip(private, F.partitions)):
            if not G.refines(Ft):
                raise fs.StructuralError(f"private information at {t} does not contain market information")
            if t > 0 and not G.refines(private[t - 1]):
                raise fs.StructuralError(f"private information shrinks at time {t}")
        if set(self.benefits) != set(self.premiums):
            raise fs.StructuralError("benefits and premiums must list the same issue dates")
        for t in self.benefits:
            if not 0 <= t < F.horizon:
                raise fs.StructuralError(f"issue date {t} outside 0..{F.horizon - 1}")
            if not private[t].is_measurable(self.premiums[t]):
                raise fs.MeasurabilityError(f"premium at {t} is not known at issue")
        object.__setattr__(self, "private", private)
        object.__setattr__(self, "benefits", dict(sorted(self.benefits.items())))
        object.__setattr__(self, "premiums", dict(sorted(self.premiums.items())))

    @property
    def P(self) -> fs.FiniteMeasure:
        return self.financial.reference

    @property
    def horizon(self) -> int:
        return self.financial.horizon

    @property
    def issue_dates(self) -> list[int]:
        return list(self.benefits)

    def joint_information(self, t: int) -> fs.FinitePartition:
        """``G_t v F_T``: what the limit of averaged benefits is measurable for."""
        return self.private[t].join(self.financial.filtration[self.horizon])

    def limit_benefit(self, t: int) -> fs.FiniteRV:
        """``E_P[X_t | G_t v F_T]``."""
        return fs.conditional_expectation(self.benefits[t], self.joint_information(t), self.P)


# ---------------------------------------------------------------------------
# Profit and loss
# ---------------------------------------------------------------------------


def insurance_pnl(
    allocations: Mapping[int, Sequence[float]],
    premiums: Mapping[int, float],
    draws: Mapping[int, Sequence[float]],
) -> float:
    """``sum_t sum_i alloc_t[i] * (p_t - X_t^i)`` for one scenario.

    Parameters
    ----------
    allocations
        Issue date to per-copy weights (sequence or ``Allocation``).
    premiums
        Issue date to realised premium.
    draws
        Issue date to realised benefits of the copies; must cover every copy with
        a non-zero weight.
    """
    total = 0.0
    for t, w in allocations.items():
        w = np.asarray(w.weights if isinstance(w, Allocation) else w, dtype=float)
        if not np.any(w):
            continue
        if t not in premiums:
            raise InputError(f"no premium for issue date {t}")
        if t not in draws:
            raise InputError(f"no benefit draws for issue date {t}")
        x = np.asarray(draws[t], dtype=float)
        last = int(np.flatnonzero(w)[-1])
        if x.size <= last:
            raise InputError(f"issue date {t}: {x.size} draws for {last + 1} allocated copies")
        total += float(np.dot(w, float(premiums[t]) - x[: w.size]))
    return total


def financial_pnl(strategy: np.ndarray, prices: np.ndarray, start: int = 0) -> np.ndarray:
    """Pathwise ``sum_{s >= start} xi_s . (S_{s+1} - S_s)``.

    Parameters
    ----------
    strategy
        Holdings of shape ``(paths, T, d)``; ``strategy[:, s]`` is held over ``(s, s+1]``.
    prices
        Discounted prices of shape ``(paths, T + 1, d)``.
    start
        First trading date; earlier holdings must be zero.
    """
    xi = np.asarray(strategy, dtype=float)
    S = np.asarray(prices, dtype=float)
    if xi.ndim != 3 or S.ndim != 3 or xi.shape[1] + 1 != S.shape[1] or xi.shape[::2] != S.shape[::2]:
        raise InputError(f"shapes {xi.shape} and {S.shape} are incompatible")
    if start > 0 and np.any(xi[:, :start]):
        raise InputError(f"strategy trades before its start date {start}")
    dS = np.diff(S, axis=1)
    return np.einsum("psd,psd->p", xi[:, start:], dS[:, start:])


def check_adapted(strategy: Sequence[Sequence[fs.FiniteRV]], market: fs.FiniteMarket, start: int = 0) -> None:
    """Raise ``AdaptednessError`` unless each holding over ``(s, s+1]`` is ``F_s``-measurable."""
    F = market.filtration
    for offset, holding in enumerate(strategy):
        s = start + offset
        for k, xi in enumerate(holding):
            if not F[s].is_measurable(xi):
                raise AdaptednessError(f"holding in asset {k} at time {s} is not adapted")


@dataclass(frozen=True)
class Allocation:
    """Contract sizes ``weights[i] >= 0`` sold to seekers at issue date ``t``."""

    t: int
    weights: tuple
    bound: float = 1.0

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if any(not np.isfinite(x) or x < 0 for x in w):
            raise InputError("allocation weights must be finite and non-negative")
        if sum(w) > self.bound * (1 + 1e-12):
            raise InputError(f"total mass {sum(w)} exceeds the bound {self.bound}")
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(sum(self.weights))

    @classmethod
    def uniform(cls, t: int, n: int, active: bool = True, bound: float = 1.0) -> "Allocation":
        """``1/n`` to each of ``n`` seekers when ``active``, nothing otherwise."""
        if n < 1:
            raise ValueError("population size must be positive")
        return cls(t, (1.0 / n if active else 0.0,) * n, bound)


# ---------------------------------------------------------------------------
# No-arbitrage certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NifaResult:
    """Outcome of the no-arbitrage search.

    ``certified`` is true when ``measure`` is an equivalent martingale measure
    with ``premium <= composed value`` for every issue date.  ``slack[t]`` is the
    smallest ``value - premium`` over outcomes of positive probability for the
    measure returned (or for the best candidate tried when not certified).
    """

    certified: bool
    measure: fs.FiniteMeasure | None
    leaf_masses: tuple | None
    slack: dict
    candidates_tried: int


def composed_values(market: InsuranceMarket, Q: fs.FiniteMeasure) -> dict:
    """``E_Q[E_P[X_t | F_T] | F_t]`` for each issue date."""
    F = market.financial.filtration
    FT = F[market.horizon]
    return {t: fs.qp_value(X, Q, market.P, FT, F[t]) for t, X in market.benefits.items()}


def _min_slack(market: InsuranceMarket, Q: fs.FiniteMeasure) -> dict:
    P = market.P
    values = composed_values(market, Q)
    out = {}
    for t, v in values.items():
        p = market.premiums[t]
        out[t] = min(v.values[i] - p.values[i] for i in range(P.space.size) if P.weights[i] > 0)
    return out


def _candidates(poly: fs.MartingalePolytope):
    for v in poly.vertices:
        yield v
    bary = poly.barycenter()
    yield bary
    for k in range(1, HALVING_DEPTH + 1):
        lam = 1 - Fraction(1, 2**k)
        for v in poly.vertices:
            yield tuple(b + lam * (x - b) for b, x in zip(bary, v))


def check_nifa(market: InsuranceMarket, polytope: fs.MartingalePolytope | None = None) -> NifaResult:
    """Search for an equivalent martingale measure that makes every premium fair or cheap.

    Candidates are the vertices of the martingale polytope, its barycenter, then
    points ``bary + (1 - 2^-k)(vertex - bary)`` for growing ``k``.  The search is
    exact but incomplete: a negative answer is inconclusive.

    Raises
    ------
    MarketArbitrageError
        If the financial market admits no equivalent martingale measure.
    """
    poly = polytope or fs.martingale_measures(market.financial)
    if not poly.has_equivalent:
        raise fs.MarketArbitrageError("financial market admits no equivalent martingale measure")
    best = None
    tried = 0
    for leaf_masses in _candidates(poly):
        tried += 1
        if any(q <= 0 for q in leaf_masses):
            continue
        Q = poly.to_measure(leaf_masses)
        slack = _min_slack(market, Q)
        worst = min(slack.values()) if slack else ZERO
        if worst >= 0:
            return NifaResult(True, Q, tuple(leaf_masses), slack, tried)
        if best is None or worst > best[0]:
            best = (worst, slack)
    return NifaResult(False, None, None, best[1] if best else {}, tried)


# ---------------------------------------------------------------------------
# Arbitrage certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArbitrageCertificate:
    """Issue date ``t`` and trigger set ``A_t`` on which selling and hedging wins.

    ``trigger_blocks`` are indices of ``F_t`` blocks with ``premium_floor > hedge_price``.
    ``limit_benefit`` is ``E_P[X_t | G_t v F_T]``, ``envelope`` its block-wise max
    on ``F_T`` atoms, and ``hedge`` the superhedge of the envelope from ``t``.
    """

    t: int
    trigger_blocks: tuple
    trigger_outcomes: frozenset
    trigger_probability: Fraction
    premium_floor: fs.FiniteRV
    hedge_price: fs.FiniteRV
    limit_benefit: fs.FiniteRV
    envelope: fs.FiniteRV
    hedge: fs.SuperhedgeResult

    def limit_pnl(self, market: InsuranceMarket) -> fs.FiniteRV:
        """``1_A (p_t - E_P[X_t | G_t v F_T] + hedge gains)``: the large-portfolio P&L."""
        gains = fs.hedge_gains(self.hedge.strategy, market.financial, self.t)
        p = market.premiums[self.t]
        vals = tuple(
            (p.values[i] - self.limit_benefit.values[i] + gains.values[i]) if i in self.trigger_outcomes else ZERO
            for i in range(p.space.size)
        )
        return fs.FiniteRV(p.space, vals)


def _atom_envelope(H: fs.FiniteRV, part: fs.FinitePartition, P: fs.FiniteMeasure) -> fs.FiniteRV:
    return fs.cond_ess_bounds(H, part, P).upper


def certificate_for(
    market: InsuranceMarket,
    t: int,
    polytope: fs.MartingalePolytope | None = None,
    force: bool = False,
) -> ArbitrageCertificate | None:
    """Build the certificate at issue date ``t``.

    Without ``force`` the trigger set holds the positive-mass ``F_t`` blocks with
    ``premium_floor > hedge_price`` and ``None`` is returned when it is empty.
    With ``force`` every positive-mass block triggers; the result then carries
    no arbitrage guarantee and serves as a control.
    """
    poly = polytope or fs.martingale_measures(market.financial)
    if not poly.has_equivalent:
        raise fs.MarketArbitrageError("financial market admits no equivalent martingale measure")
    P = market.P
    F = market.financial.filtration
    floor = fs.cond_ess_bounds(market.premiums[t], F[t], P).lower
    H = market.limit_benefit(t)
    env = _atom_envelope(H, F[market.horizon], P)
    hedge = fs.superhedge_price(env, market.financial, t, poly)
    blocks = [
        k
        for k, block in enumerate(F[t].blocks)
        if P.mass(block) > 0 and (force or floor.values[block[0]] > hedge.price.values[block[0]])
    ]
    if not blocks:
        return None
    outcomes = frozenset(i for k in blocks for i in F[t].blocks[k])
    return ArbitrageCertificate(
        t=t,
        trigger_blocks=tuple(blocks),
        trigger_outcomes=outcomes,
        trigger_probability=P.mass(outcomes),
        premium_floor=floor,
        hedge_price=hedge.price,
        limit_benefit=H,
        envelope=env,
        hedge=hedge,
    )


def check_ifa(market: InsuranceMarket, polytope: fs.MartingalePolytope | None = None) -> ArbitrageCertificate | None:
    """Return a certificate for the first issue date admitting arbitrage, else ``None``.

    For each issue date the worst-case premium given ``F_t`` is compared with the
    superhedging price at ``t`` of the limiting benefit.  A certificate is issued
    when the premium is strictly larger on some ``F_t`` block of positive mass.
    """
    poly = polytope or fs.martingale_measures(market.financial)
    for t in market.issue_dates:
        cert = certificate_for(market, t, poly)
        if cert is not None:
            return cert
    return None


@dataclass(frozen=True)
class MarketCheck:
    """Combined verdict: ``"nifa"``, ``"ifa"`` or ``"inconclusive"``."""

    verdict: str
    nifa: NifaResult
    certificate: ArbitrageCertificate | None


def check_market(market: InsuranceMarket) -> MarketCheck:
    poly = fs.martingale_measures(market.financial)
    nifa = check_nifa(market, poly)
    cert = None if nifa.certified else check_ifa(market, poly)
    if nifa.certified:
        verdict = "nifa"
    elif cert is not None:
        verdict = "ifa"
    else:
        verdict = "inconclusive"
    return MarketCheck(verdict, nifa, cert)


# ---------------------------------------------------------------------------
# Simulated arbitrage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArbitrageRun:
    """Summary of ``runs`` scenarios of the certified strategy with ``n`` copies."""

    n: int
    runs: int
    pnl: np.ndarray = field(repr=False)
    minimum: float
    mean: float
    positive_fraction: float
    trigger_probability: float
    max_conditional_variance: float

    @property
    def noise_floor(self) -> float:
        """``-4 sqrt(var_max / n)``: four standard deviations of the averaged benefit."""
        return -4.0 * float(np.sqrt(self.max_conditional_variance / self.n))


def construct_arbitrage(
    cert: ArbitrageCertificate,
    market: InsuranceMarket,
    n: int,
    runs: int,
    rng: np.random.Generator,
) -> ArbitrageRun:
    """Simulate the certified strategy: sell ``1/n`` of each of ``n`` copies on ``A_t`` and hedge.

    Each run draws an outcome from ``P``; the ``n`` benefits are drawn i.i.d. from
    the law of ``X_t`` given the ``G_t v F_T`` cell of that outcome.
    """
    if n < 1 or runs < 1:
        raise ValueError("n and runs must be positive")
    t = cert.t
    P = market.P
    X = market.benefits[t]
    cells = market.joint_information(t)
    gains = fs.hedge_gains(cert.hedge.strategy, market.financial, t)
    premium = market.premiums[t]

    cell_law = []
    var_max = 0.0
    for block in cells.blocks:
        mass = P.mass(block)
        if mass == 0:
            cell_law.append(None)
            continue
        values = np.array([float(X.values[i]) for i in block])
        probs = np.array([float(P.weights[i] / mass) for i in block])
        cell_law.append((values, probs))
        if block[0] in cert.trigger_outcomes:
            m = float(np.dot(probs, values))
            var_max = max(var_max, float(np.dot(probs, (values - m) ** 2)))

    weights = np.array([float(w) for w in P.weights])
    outcomes = rng.choice(P.space.size, size=runs, p=weights / weights.sum())
    pnl = np.zeros(runs)
    for r, i in enumerate(outcomes):
        if i not in cert.trigger_outcomes:
            continue
        values, probs = cell_law[cells.block_of(int(i))]
        counts = rng.multinomial(n, probs)
        avg = float(np.dot(counts, values)) / n
        pnl[r] = float(premium.values[i]) - avg + float(gains.values[i])
    active = np.isin(outcomes, list(cert.trigger_outcomes))
    return ArbitrageRun(
        n=n,
        runs=runs,
        pnl=pnl,
        minimum=float(pnl.min()),
        mean=float(pnl.mean()),
        positive_fraction=float(np.mean(pnl[active] > 0)) if active.any() else 0.0,
        trigger_probability=float(cert.trigger_probability),
        max_conditional_variance=var_max,
    )


# ---------------------------------------------------------------------------
# Law of large numbers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SLLNReport:
    """Root-mean-square error of averaged benefits against the conditional mean."""

    n_grid: tuple
    rms_error: tuple
    predicted: tuple
    exponent: float


def bernoulli_sampler(q: float) -> Callable[[int, np.random.Generator], np.ndarray]:
    if not 0 <= q <= 1:
        raise ValueError(f"probability {q} outside [0, 1]")

    def draw(n: int, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(n) < q).astype(float)

    draw.mean = q
    draw.variance = q * (1 - q)
    return draw


def slln_experiment(
    samplers: Sequence[Callable],
    n_grid: Sequence[int],
    reps: int,
    rng: np.random.Generator,
) -> SLLNReport:
    """Average ``n`` i.i.d. draws per conditioning cell and measure the error decay.

    Each sampler carries ``mean`` and ``variance`` attributes (the conditional
    moments in its cell).  The exponent is the least-squares slope of
    ``log rms`` against ``log n``; it is NaN when some error is exactly zero.
    """
    for s in samplers:
        if not np.isfinite(getattr(s, "variance", np.inf)):
            raise AssumptionError("benefit variance must be finite")
    if len(n_grid) < 2:
        raise ValueError("need at least two sample sizes")
    rms, pred = [], []
    for n in n_grid:
        sq = 0.0
        for s in samplers:
            for _ in range(reps):
                sq += (float(np.mean(s(int(n), rng))) - s.mean) ** 2
        rms.append(float(np.sqrt(sq / (reps * len(samplers)))))
        pred.append(float(np.sqrt(np.mean([s.variance for s in samplers]) / n)))
    if min(rms) > 0:
        slope = float(np.polyfit(np.log(np.asarray(n_grid, float)), np.log(rms), 1)[0])
    else:
        slope = float("nan")  # exact averages (constant benefits) have no decay to fit
    return SLLNReport(tuple(int(n) for n in n_grid), tuple(rms), tuple(pred), slope)
