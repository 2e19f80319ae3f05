"""The six-state one-period example used as golden reference.

Three financial states (good, medium, bad) times two insurance states
(payment, no payment).  The stock moves from 1 to 3/2, 1 or 1/2.  The
physical measure is ``(h/10, 9h/10, 2k/10, 8k/10, 4l/10, 6l/10)``.  With
``k = 0`` the medium state is impossible and the market is complete.

Golden values live in :mod:`qpval.constants`.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction as Fr

from . import finite_space as fs

OUTCOMES = ("g,p", "g,n", "m,p", "m,n", "b,p", "b,n")
STATES = (("g,p", "g,n"), ("m,p", "m,n"), ("b,p", "b,n"))
STOCK_T1 = (Fr(3, 2), Fr(3, 2), Fr(1), Fr(1), Fr(1, 2), Fr(1, 2))
STRIKE = Fr(7, 10)
PAYMENT_PROB = {"g": Fr(1, 10), "m": Fr(2, 10), "b": Fr(4, 10)}


@dataclass(frozen=True)
class DiscreteExample:
    space: fs.FiniteOutcomeSpace
    P: fs.FiniteMeasure
    states: fs.FinitePartition
    filtration: fs.FiniteFiltration
    market: fs.FiniteMarket
    X: fs.FiniteRV  # payment indicator
    Y: fs.FiniteRV  # payment times call on the stock


def discrete_example(h=Fr(1, 3), k=Fr(1, 3), l=Fr(1, 3)) -> DiscreteExample:
    h, k, l = Fr(h), Fr(k), Fr(l)
    if h + k + l != 1 or min(h, k, l) < 0:
        raise ValueError("h, k, l must be non-negative and sum to one")
    space = fs.FiniteOutcomeSpace(OUTCOMES)
    P = fs.FiniteMeasure(space, (h / 10, 9 * h / 10, 2 * k / 10, 8 * k / 10, 4 * l / 10, 6 * l / 10))
    states = fs.FinitePartition.from_labels(space, STATES)
    filt = fs.FiniteFiltration((fs.FinitePartition.trivial(space), states))
    S0 = fs.FiniteRV.constant(space, 1)
    S1 = fs.FiniteRV(space, STOCK_T1)
    market = fs.FiniteMarket(filt, ((S0,), (S1,)), P)
    X = fs.FiniteRV.indicator(space, ("g,p", "m,p", "b,p"))
    Y = X * S1.map(lambda v: max(v - STRIKE, 0))
    return DiscreteExample(space, P, states, filt, market, X, Y)


def complete_example() -> DiscreteExample:
    return discrete_example(Fr(1, 2), Fr(0), Fr(1, 2))


def risk_neutral(ex: DiscreteExample, s) -> fs.FiniteMeasure:
    """``Q^s`` spread within each financial state proportionally to ``P``."""
    s = Fr(s)
    masses = {0: s, 1: 1 - 2 * s, 2: s}
    weights = [Fr(0)] * ex.space.size
    for b, block in enumerate(ex.states.blocks):
        pm = ex.P.mass(block)
        for i in block:
            weights[i] = masses[b] * (ex.P.weights[i] / pm if pm else Fr(1, len(block)))
    return fs.FiniteMeasure(ex.space, tuple(weights))
