"""Golden rationals for the six-state reference example.

Outcome order: (good, pay), (good, none), (medium, pay), (medium, none),
(bad, pay), (bad, none).  ``X`` pays 1 on payment; ``Y`` pays ``(S_1 - 7/10)^+``
on payment.  The incomplete market's risk-neutral measures put mass
``(s, 1 - 2s, s)`` on the three financial states, ``s`` in ``[0, 1/2]``.
"""
from __future__ import annotations

from fractions import Fraction as Fr

# complete market: medium state impossible, h = l = 1/2
COMPLETE_QP = (Fr(1, 20), Fr(9, 20), Fr(0), Fr(0), Fr(1, 5), Fr(3, 10))
COMPLETE_EX = Fr(1, 4)
COMPLETE_EY = Fr(1, 25)

# incomplete market, h = k = l = 1/3
INCOMPLETE_S = Fr(1, 4)
INCOMPLETE_QP = (Fr(1, 40), Fr(9, 40), Fr(1, 10), Fr(2, 5), Fr(1, 10), Fr(3, 20))
INCOMPLETE_EX = Fr(9, 40)
INCOMPLETE_EY = Fr(1, 20)

# bounds over the closed family s in [0, 1/2]
SUP_EX = Fr(1, 4)
SUP_EY = Fr(3, 50)


def incomplete_qp(s) -> tuple:
    """Composed measure of the incomplete market as a function of ``s``."""
    s = Fr(s)
    return (s / 10, 9 * s / 10, 2 * (1 - 2 * s) / 10, 8 * (1 - 2 * s) / 10, 4 * s / 10, 6 * s / 10)


def incomplete_ex(s) -> Fr:
    return Fr(1, 5) + Fr(s) / 10


def incomplete_ey(s) -> Fr:
    return Fr(3, 50) - 4 * Fr(s) / 100
