"""Closed-form values against nested Monte Carlo on one model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import affine_engine as ae
from . import products as pr
from .montecarlo import (
    QPEstimate,
    RngSpec,
    SimulationContext,
    SurvivalPayoff,
    TwoTimePayoff,
    estimate_product,
    estimate_qp_nested,
)
from .stopping_times import Copula2

COMPARISONS = (
    "survival_strict",
    "survival_lagged",
    "two_time_unprimed",
    "two_time_primed",
    "surrender_option",
    "va_surrender",
)


@dataclass(frozen=True)
class Comparison:
    name: str
    closed_form: float
    estimate: QPEstimate

    @property
    def z(self) -> float:
        return self.estimate.z_score(self.closed_form)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "closed_form": self.closed_form,
            "mc_mean": self.estimate.mean,
            "mc_stderr": self.estimate.stderr,
            "z": self.z,
            "n": self.estimate.n,
            "seed": self.estimate.seed,
            "stream": self.estimate.stream,
        }


def oracle_comparisons(
    model: ae.GaussianFactorModel,
    stock: ae.StockSpec,
    int1: ae.IntensitySpec,
    int2: ae.IntensitySpec,
    n: int,
    seed: int,
    T: int = 12,
    s: int = 6,
    antithetic: bool = False,
) -> list[Comparison]:
    """Run the six closed-form versus simulation checks at ``t = 0``.

    Each comparison draws from its own stream ``(seed, k)``.  The two-time and
    variable-annuity checks use the independence copula, which the closed
    forms assume.
    """
    if not 0 <= s < T:
        raise ValueError(f"need 0 <= s < T, got s={s}, T={T}")
    z0 = model.z0
    indep = Copula2()
    single = SimulationContext(model, stock, int1)
    double = SimulationContext(model, stock, int1, int2, indep)
    out = []

    def rng(k: int) -> RngSpec:
        return RngSpec(seed, k)

    for k, mode in enumerate(("strict", "lagged")):
        closed = ae.price_survival_claim(model, stock, int1, 0, T, z0, mode)
        est = estimate_qp_nested(SurvivalPayoff(T, mode), single, n, rng(k), antithetic=antithetic)
        out.append(Comparison(f"survival_{mode}", closed, est))
    for k, mode in enumerate(("unprimed", "primed"), start=2):
        closed = ae.price_two_time_block(model, stock, int1, int2, 0, s, T, z0, mode)
        est = estimate_qp_nested(TwoTimePayoff(T, s, mode), double, n, rng(k), antithetic=antithetic)
        out.append(Comparison(f"two_time_{mode}", closed, est))
    surrender = pr.SurrenderOptionSpec(model, stock, int1, 0, T)
    out.append(Comparison(
        "surrender_option",
        pr.price_surrender_option(surrender),
        estimate_product(surrender, None, n, rng(4), antithetic),
    ))
    va = pr.VASurrenderSpec(model, stock, int1, int2, 0, T, indep)
    out.append(Comparison(
        "va_surrender",
        pr.price_va_surrender(va),
        estimate_product(va, None, n, rng(5), antithetic),
    ))
    for c in out:
        if not (np.isfinite(c.closed_form) and np.isfinite(c.estimate.mean)):
            raise ArithmeticError(f"non-finite value in comparison {c.name}")
    return out
