"""Exact probability calculus on finite outcome spaces.

Everything here works in :class:`fractions.Fraction` arithmetic so that results
can be compared with ``==``.  Sigma-algebras are represented by the partitions
that generate them; a filtration is a list of successively finer partitions.

The main entry points are

* :func:`conditional_expectation` and :func:`cond_ess_bounds`,
* :func:`qp_compose` / :func:`qp_expect` / :func:`qp_value` for the composed
  measure that prices public information under ``Q`` and private information
  under ``P``,
* :func:`martingale_measures` and :func:`superhedge_price` for the financial
  side of a finite market.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Any, Iterable, Sequence

ZERO = Fraction(0)
ONE = Fraction(1)


class FiniteSpaceError(ValueError):
    """Base class for errors raised by this module."""


class StructuralError(FiniteSpaceError):
    """Malformed space, partition, filtration or random variable."""


class MeasurabilityError(FiniteSpaceError):
    """A random variable is not measurable with respect to a partition."""


class EquivalenceError(FiniteSpaceError):
    """Two measures that must be equivalent disagree on a null set."""


class MarketArbitrageError(FiniteSpaceError):
    """The financial market admits no equivalent martingale measure."""


def as_fraction(value: Any) -> Fraction:
    """Convert ``value`` to a Fraction.

    Strings may be ``"num/den"`` or decimal literals.  Floats go through their
    shortest decimal repr, so ``0.1`` becomes ``1/10`` rather than the binary
    approximation.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not probabilities")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as a rational number")


def format_fraction(value: Fraction) -> str:
    """Serialise as ``"num/den"`` (or ``"num"`` for integers)."""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteOutcomeSpace:
    """Ordered set of opaque outcome labels."""

    outcomes: tuple
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        outcomes = tuple(self.outcomes)
        if not outcomes:
            raise StructuralError("outcome space must be non-empty")
        index = {}
        for i, label in enumerate(outcomes):
            if label in index:
                raise StructuralError(f"duplicate outcome label {label!r}")
            index[label] = i
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.outcomes)

    def index(self, label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise StructuralError(f"unknown outcome {label!r}") from None

    def __len__(self) -> int:
        return len(self.outcomes)


@dataclass(frozen=True)
class FiniteRV:
    """A random variable: one rational value per outcome."""

    space: FiniteOutcomeSpace
    values: tuple

    def __post_init__(self):
        values = tuple(as_fraction(v) for v in self.values)
        if len(values) != self.space.size:
            raise StructuralError(
                f"random variable has {len(values)} values for {self.space.size} outcomes"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, space: FiniteOutcomeSpace, c) -> "FiniteRV":
        c = as_fraction(c)
        return cls(space, (c,) * space.size)

    @classmethod
    def from_mapping(cls, space: FiniteOutcomeSpace, mapping: dict, default=0) -> "FiniteRV":
        values = [as_fraction(default)] * space.size
        for label, v in mapping.items():
            values[space.index(label)] = as_fraction(v)
        return cls(space, tuple(values))

    @classmethod
    def indicator(cls, space: FiniteOutcomeSpace, labels: Iterable) -> "FiniteRV":
        hit = {space.index(label) for label in labels}
        return cls(space, tuple(ONE if i in hit else ZERO for i in range(space.size)))

    def __getitem__(self, label) -> Fraction:
        return self.values[self.space.index(label)]

    def _combine(self, other, op) -> "FiniteRV":
        if isinstance(other, FiniteRV):
            if other.space != self.space:
                raise StructuralError("random variables live on different spaces")
            return FiniteRV(self.space, tuple(op(a, b) for a, b in zip(self.values, other.values)))
        c = as_fraction(other)
        return FiniteRV(self.space, tuple(op(a, c) for a in self.values))

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._combine(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __neg__(self):
        return FiniteRV(self.space, tuple(-a for a in self.values))

    def map(self, fn) -> "FiniteRV":
        return FiniteRV(self.space, tuple(as_fraction(fn(a)) for a in self.values))

    def as_floats(self) -> list[float]:
        return [float(v) for v in self.values]


@dataclass(frozen=True)
class FiniteMeasure:
    """Probability measure with rational weights summing exactly to one."""

    space: FiniteOutcomeSpace
    weights: tuple

    def __post_init__(self):
        weights = tuple(as_fraction(w) for w in self.weights)
        if len(weights) != self.space.size:
            raise StructuralError(
                f"measure has {len(weights)} weights for {self.space.size} outcomes"
            )
        if any(w < 0 for w in weights):
            raise StructuralError("measure weights must be non-negative")
        total = sum(weights, ZERO)
        if total != 1:
            raise StructuralError(f"measure weights sum to {total}, not 1")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_mapping(cls, space: FiniteOutcomeSpace, mapping: dict) -> "FiniteMeasure":
        weights = [ZERO] * space.size
        for label, w in mapping.items():
            weights[space.index(label)] = as_fraction(w)
        return cls(space, tuple(weights))

    @classmethod
    def uniform(cls, space: FiniteOutcomeSpace) -> "FiniteMeasure":
        return cls(space, (Fraction(1, space.size),) * space.size)

    def __getitem__(self, label) -> Fraction:
        return self.weights[self.space.index(label)]

    def mass(self, indices: Iterable[int]) -> Fraction:
        return sum((self.weights[i] for i in indices), ZERO)

    @property
    def support(self) -> frozenset:
        return frozenset(i for i, w in enumerate(self.weights) if w > 0)

    def expect(self, X: FiniteRV) -> Fraction:
        _same_space(self.space, X.space)
        return sum((w * x for w, x in zip(self.weights, X.values)), ZERO)


@dataclass(frozen=True)
class FinitePartition:
    """A partition of the space into disjoint non-empty blocks of outcome indices."""

    space: FiniteOutcomeSpace
    blocks: tuple
    _block_of: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        owner = [None] * self.space.size
        for k, block in enumerate(blocks):
            if not block:
                raise StructuralError("partition blocks must be non-empty")
            for i in block:
                if not 0 <= i < self.space.size:
                    raise StructuralError(f"outcome index {i} out of range")
                if owner[i] is not None:
                    raise StructuralError(
                        f"outcome {self.space.outcomes[i]!r} appears in two blocks"
                    )
                owner[i] = k
        missing = [self.space.outcomes[i] for i, o in enumerate(owner) if o is None]
        if missing:
            raise StructuralError(f"partition does not cover outcomes {missing}")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "_block_of", tuple(owner))

    @classmethod
    def from_labels(cls, space: FiniteOutcomeSpace, blocks: Iterable[Iterable]) -> "FinitePartition":
        return cls(space, tuple(tuple(space.index(label) for label in b) for b in blocks))

    @classmethod
    def trivial(cls, space: FiniteOutcomeSpace) -> "FinitePartition":
        return cls(space, (tuple(range(space.size)),))

    @classmethod
    def discrete(cls, space: FiniteOutcomeSpace) -> "FinitePartition":
        return cls(space, tuple((i,) for i in range(space.size)))

    def block_of(self, i: int) -> int:
        return self._block_of[i]

    def __len__(self) -> int:
        return len(self.blocks)

    def refines(self, coarser: "FinitePartition") -> bool:
        """True if every block of ``self`` sits inside one block of ``coarser``."""
        _same_space(self.space, coarser.space)
        return all(len({coarser.block_of(i) for i in b}) == 1 for b in self.blocks)

    def join(self, other: "FinitePartition") -> "FinitePartition":
        """Coarsest common refinement (the sigma-algebra generated by both)."""
        _same_space(self.space, other.space)
        cells: dict[tuple[int, int], list[int]] = {}
        for i in range(self.space.size):
            cells.setdefault((self.block_of(i), other.block_of(i)), []).append(i)
        return FinitePartition(self.space, tuple(tuple(v) for v in cells.values()))

    def is_measurable(self, X: FiniteRV) -> bool:
        return all(len({X.values[i] for i in b}) == 1 for b in self.blocks)

    def labels(self) -> list[list]:
        return [[self.space.outcomes[i] for i in b] for b in self.blocks]


@dataclass(frozen=True)
class FiniteFiltration:
    """Partitions indexed by time ``0..T``, each refining its predecessor."""

    partitions: tuple

    def __post_init__(self):
        parts = tuple(self.partitions)
        if not parts:
            raise StructuralError("a filtration needs at least one partition")
        for t in range(1, len(parts)):
            if not parts[t].refines(parts[t - 1]):
                raise StructuralError(f"partition at time {t} does not refine time {t - 1}")
        object.__setattr__(self, "partitions", parts)

    @property
    def space(self) -> FiniteOutcomeSpace:
        return self.partitions[0].space

    @property
    def horizon(self) -> int:
        return len(self.partitions) - 1

    def __getitem__(self, t: int) -> FinitePartition:
        return self.partitions[t]


@dataclass(frozen=True)
class FiniteMarket:
    """Discounted asset prices adapted to a filtration.

    ``prices[t][k]`` is the discounted price of asset ``k`` at time ``t``.  The
    numeraire is implicit (constant one).  ``reference`` is the physical measure;
    only its null sets are used here, to drop impossible atoms of ``F_T``.
    """

    filtration: FiniteFiltration
    prices: tuple
    reference: FiniteMeasure | None = None

    def __post_init__(self):
        prices = tuple(tuple(row) for row in self.prices)
        if len(prices) != len(self.filtration.partitions):
            raise StructuralError(
                f"prices given for {len(prices)} dates, filtration has "
                f"{len(self.filtration.partitions)}"
            )
        d = len(prices[0])
        for t, row in enumerate(prices):
            if len(row) != d:
                raise StructuralError(f"time {t} lists {len(row)} assets, expected {d}")
            for k, S in enumerate(row):
                _same_space(self.filtration.space, S.space)
                if not self.filtration[t].is_measurable(S):
                    raise MeasurabilityError(f"asset {k} is not adapted at time {t}")
        if self.reference is not None:
            _same_space(self.filtration.space, self.reference.space)
        object.__setattr__(self, "prices", prices)

    @property
    def space(self) -> FiniteOutcomeSpace:
        return self.filtration.space

    @property
    def horizon(self) -> int:
        return self.filtration.horizon

    @property
    def num_assets(self) -> int:
        return len(self.prices[0])

    def price_vector(self, t: int, i: int) -> tuple:
        return tuple(S.values[i] for S in self.prices[t])

    def possible(self, i: int) -> bool:
        return self.reference is None or self.reference.weights[i] > 0


def _same_space(a: FiniteOutcomeSpace, b: FiniteOutcomeSpace) -> None:
    if a is not b and a != b:
        raise StructuralError("objects live on different outcome spaces")


# ---------------------------------------------------------------------------
# Conditional expectations and the composed measure
# ---------------------------------------------------------------------------


def conditional_expectation(X: FiniteRV, part: FinitePartition, mu: FiniteMeasure) -> FiniteRV:
    """``E_mu[X | sigma(part)]``; the value on ``mu``-null blocks is 0 by convention."""
    _same_space(X.space, part.space)
    _same_space(X.space, mu.space)
    values = [ZERO] * X.space.size
    for block in part.blocks:
        mass = mu.mass(block)
        if mass == 0:
            continue
        v = sum((mu.weights[i] * X.values[i] for i in block), ZERO) / mass
        for i in block:
            values[i] = v
    return FiniteRV(X.space, tuple(values))


def _check_equivalent(Q: FiniteMeasure, P: FiniteMeasure, F: FinitePartition) -> None:
    for k, block in enumerate(F.blocks):
        q, p = Q.mass(block), P.mass(block)
        if (q > 0) != (p > 0):
            labels = [F.space.outcomes[i] for i in block]
            raise EquivalenceError(
                f"Q and P disagree on null block {k} {labels}: Q={q}, P={p}"
            )


def qp_compose(Q: FiniteMeasure, P: FiniteMeasure, F: FinitePartition) -> FiniteMeasure:
    """The measure equal to ``Q`` on ``sigma(F)`` with ``P``'s conditional law given ``F``.

    Built from the block density ``L = Q(B) / P(B)`` as ``weight = P * L``.  Only
    the block masses of ``Q`` matter.
    """
    _same_space(Q.space, P.space)
    _same_space(Q.space, F.space)
    _check_equivalent(Q, P, F)
    weights = [ZERO] * P.space.size
    for block in F.blocks:
        p = P.mass(block)
        if p == 0:
            continue
        density = Q.mass(block) / p
        for i in block:
            weights[i] = P.weights[i] * density
    return FiniteMeasure(P.space, tuple(weights))


def qp_expect(X: FiniteRV, Q: FiniteMeasure, P: FiniteMeasure, F: FinitePartition) -> Fraction:
    """``E_Q[E_P[X | F]]`` computed block by block (does not build the composed measure)."""
    _same_space(X.space, P.space)
    _check_equivalent(Q, P, F)
    total = ZERO
    for block in F.blocks:
        p = P.mass(block)
        if p == 0:
            continue
        inner = sum((P.weights[i] * X.values[i] for i in block), ZERO) / p
        total += Q.mass(block) * inner
    return total


def qp_value(
    X: FiniteRV,
    Q: FiniteMeasure,
    P: FiniteMeasure,
    F: FinitePartition,
    H: FinitePartition,
) -> FiniteRV:
    """Conditional QP value ``E_Q[E_P[X | F] | H]`` for ``H`` coarser than ``F``."""
    if not F.refines(H):
        raise StructuralError("conditioning partition must be coarser than F")
    _check_equivalent(Q, P, F)
    return conditional_expectation(conditional_expectation(X, F, P), H, Q)


@dataclass(frozen=True)
class EssBounds:
    """Block-wise essential sup/inf of a random variable."""

    upper: FiniteRV
    lower: FiniteRV
    null_blocks: tuple  # indices of mu-null blocks; both bounds are 0 there


def cond_ess_bounds(p: FiniteRV, part: FinitePartition, mu: FiniteMeasure) -> EssBounds:
    """Per block, max and min of ``p`` over outcomes of positive ``mu``-mass."""
    _same_space(p.space, part.space)
    up = [ZERO] * p.space.size
    down = [ZERO] * p.space.size
    null = []
    for k, block in enumerate(part.blocks):
        live = [p.values[i] for i in block if mu.weights[i] > 0]
        if not live:
            null.append(k)
            continue
        hi, lo = max(live), min(live)
        for i in block:
            up[i], down[i] = hi, lo
    return EssBounds(FiniteRV(p.space, tuple(up)), FiniteRV(p.space, tuple(down)), tuple(null))


# ---------------------------------------------------------------------------
# Exact linear algebra helpers
# ---------------------------------------------------------------------------


def _solve_unique(rows: Sequence[Sequence[Fraction]], rhs: Sequence[Fraction]) -> list | None:
    """Unique solution of ``rows @ x = rhs``; None if inconsistent or underdetermined."""
    n = len(rows[0])
    aug = [[as_fraction(v) for v in r] + [as_fraction(b)] for r, b in zip(rows, rhs)]
    r = 0
    for c in range(n):
        piv = next((i for i in range(r, len(aug)) if aug[i][c] != 0), None)
        if piv is None:
            return None
        aug[r], aug[piv] = aug[piv], aug[r]
        pv = aug[r][c]
        aug[r] = [v / pv for v in aug[r]]
        for i in range(len(aug)):
            if i != r and aug[i][c] != 0:
                f = aug[i][c]
                aug[i] = [a - f * b for a, b in zip(aug[i], aug[r])]
        r += 1
    if any(aug[i][n] != 0 for i in range(r, len(aug))):
        return None
    return [aug[i][n] for i in range(n)]


def _independent_columns(matrix: Sequence[Sequence[Fraction]], ncols: int) -> list[int]:
    """Indices of a maximal linearly independent set of columns."""
    rows = [list(r) for r in matrix]
    chosen = []
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(rows)) if rows[i][c] != 0), None)
        if piv is None:
            continue
        rows[r], rows[piv] = rows[piv], rows[r]
        pv = rows[r][c]
        rows[r] = [v / pv for v in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[r])]
        chosen.append(c)
        r += 1
    return chosen


def one_step_vertices(increments: Sequence[Sequence[Fraction]]) -> list[tuple]:
    """Extreme points of ``{q >= 0, sum q = 1, sum_j q_j x_j = 0}``.

    ``increments[j]`` is the price change ``x_j`` (a d-vector) on child ``j``.
    Each extreme point is a basic solution with support of at most ``d + 1``
    children; all such supports are enumerated.
    """
    m = len(increments)
    d = len(increments[0]) if m else 0
    found: dict[tuple, None] = {}
    for size in range(1, min(m, d + 1) + 1):
        for J in combinations(range(m), size):
            rows = [[ONE] * size] + [[increments[j][k] for j in J] for k in range(d)]
            sol = _solve_unique(rows, [ONE] + [ZERO] * d)
            if sol is None or any(q <= 0 for q in sol):
                continue
            vec = [ZERO] * m
            for j, q in zip(J, sol):
                vec[j] = q
            found[tuple(vec)] = None
    return list(found)


# ---------------------------------------------------------------------------
# Event tree of a finite market
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    t: int
    block: int
    outcomes: tuple
    price: tuple
    children: list = field(default_factory=list)
    leaf: int | None = None
    _vertices: list | None = None

    def increments(self) -> list[tuple]:
        return [tuple(c - p for c, p in zip(ch.price, self.price)) for ch in self.children]

    def vertices(self) -> list[tuple]:
        if self._vertices is None:
            self._vertices = one_step_vertices(self.increments())
        return self._vertices


class _EventTree:
    """Nodes are (time, block) pairs of positive reference mass."""

    def __init__(self, market: FiniteMarket):
        self.market = market
        T = market.horizon
        self.levels: list[list[_Node]] = []
        for t in range(T + 1):
            part = market.filtration[t]
            level = []
            for k, block in enumerate(part.blocks):
                live = tuple(i for i in block if market.possible(i))
                if not live:
                    continue
                level.append(_Node(t, k, live, market.price_vector(t, live[0])))
            self.levels.append(level)
        for t in range(T):
            nxt = market.filtration[t + 1]
            by_block = {n.block: n for n in self.levels[t + 1]}
            for node in self.levels[t]:
                kids = sorted({nxt.block_of(i) for i in node.outcomes})
                node.children = [by_block[k] for k in kids]
        self.leaves = self.levels[T]
        for j, node in enumerate(self.leaves):
            node.leaf = j
        # virtual root: spreads mass over the time-0 blocks without constraint
        self.root = _Node(-1, -1, (), (ZERO,) * market.num_assets, list(self.levels[0]))
        n = len(self.root.children)
        self.root._vertices = [
            tuple(ONE if j == k else ZERO for j in range(n)) for k in range(n)
        ]

    def nodes(self):
        for level in self.levels:
            yield from level


# ---------------------------------------------------------------------------
# Martingale measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MartingalePolytope:
    """All martingale measures of a finite market, described on the atoms of ``F_T``.

    ``leaves`` lists the atoms (outcome-index tuples) of positive reference mass;
    measures are leaf-mass vectors in that order.  ``equalities`` holds rows
    ``(coefficients, rhs)`` of the linear description; together with ``q >= 0``
    they cut out the polytope whose extreme points are ``vertices``.
    ``has_equivalent`` reports whether a martingale measure charging every leaf
    exists (i.e. whether the relative interior reaches full support).
    """

    market: FiniteMarket
    leaves: tuple
    equalities: tuple
    vertices: tuple
    has_equivalent: bool

    @property
    def is_empty(self) -> bool:
        return not self.vertices

    def barycenter(self) -> tuple:
        n = len(self.vertices)
        if n == 0:
            raise MarketArbitrageError("martingale polytope is empty")
        return tuple(sum((v[j] for v in self.vertices), ZERO) / n for j in range(len(self.leaves)))

    def satisfies(self, leaf_masses: Sequence[Fraction]) -> bool:
        if any(q < 0 for q in leaf_masses):
            return False
        return all(
            sum((c * q for c, q in zip(coeffs, leaf_masses)), ZERO) == rhs
            for coeffs, rhs in self.equalities
        )

    def to_measure(self, leaf_masses: Sequence[Fraction]) -> FiniteMeasure:
        """Spread each leaf's mass over its outcomes (proportionally to the reference
        measure when one is set, uniformly otherwise)."""
        space = self.market.space
        ref = self.market.reference
        weights = [ZERO] * space.size
        for leaf, q in zip(self.leaves, leaf_masses):
            if ref is None:
                share = {i: Fraction(1, len(leaf)) for i in leaf}
            else:
                tot = ref.mass(leaf)
                share = {i: ref.weights[i] / tot for i in leaf}
            for i, s in share.items():
                weights[i] = q * s
        return FiniteMeasure(space, tuple(weights))

    def vertex_measures(self) -> list[FiniteMeasure]:
        return [self.to_measure(v) for v in self.vertices]


def _subtree_vertices(node: _Node, limit: int) -> list[dict]:
    if not node.children:
        return [{node.leaf: ONE}]
    out: dict[frozenset, dict] = {}
    child_cache: dict[int, list[dict]] = {}
    for q in node.vertices():
        partial = [dict()]
        for j, qj in enumerate(q):
            if qj == 0:
                continue
            child = node.children[j]
            if id(child) not in child_cache:
                child_cache[id(child)] = _subtree_vertices(child, limit)
            combined = []
            for base in partial:
                for sub in child_cache[id(child)]:
                    merged = dict(base)
                    for leaf, mass in sub.items():
                        merged[leaf] = qj * mass
                    combined.append(merged)
            partial = combined
            if len(partial) > limit:
                raise FiniteSpaceError(f"more than {limit} martingale vertices; market too large")
        for vec in partial:
            out[frozenset(vec.items())] = vec
    return list(out.values())


def martingale_measures(market: FiniteMarket, max_vertices: int = 200_000) -> MartingalePolytope:
    """Linear description and vertex list of the martingale measures of ``market``.

    Vertices are assembled from the one-step extreme points at every node of the
    event tree; every extreme point of the multi-period polytope arises this way.
    """
    tree = _EventTree(market)
    leaves = tuple(node.outcomes for node in tree.leaves)
    nleaves = len(leaves)

    equalities = [((ONE,) * nleaves, ONE)]
    for t in range(market.horizon):
        for node in tree.levels[t]:
            inside = set(node.outcomes)
            for k in range(market.num_assets):
                coeffs = [ZERO] * nleaves
                for leaf_node in tree.leaves:
                    i = leaf_node.outcomes[0]
                    if i in inside:
                        coeffs[leaf_node.leaf] = market.prices[t + 1][k].values[i] - node.price[k]
                equalities.append((tuple(coeffs), ZERO))

    has_equivalent = True
    for node in tree.nodes():
        if not node.children:
            continue
        verts = node.vertices()
        if not verts:
            has_equivalent = False
            break
        if any(all(v[j] == 0 for v in verts) for j in range(len(node.children))):
            has_equivalent = False

    vertices: list[tuple] = []
    if all(node.vertices() for node in tree.nodes() if node.children):
        for vec in _subtree_vertices(tree.root, max_vertices):
            vertices.append(tuple(vec.get(j, ZERO) for j in range(nleaves)))
    else:
        has_equivalent = False
    return MartingalePolytope(market, leaves, tuple(equalities), tuple(vertices), has_equivalent)


# ---------------------------------------------------------------------------
# Superhedging
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuperhedgeResult:
    """Conditional superhedging price at ``t`` and one attaining strategy.

    ``strategy[s - t][k]`` is the holding in asset ``k`` over ``(s, s+1]``,
    block-constant on ``F_s``; on null blocks it is 0.
    """

    t: int
    price: FiniteRV
    strategy: tuple
    node_prices: dict  # (time, block) -> value process of the superhedge


def _one_step_superhedge(increments: list[tuple], values: list[Fraction]):
    """Solve ``min v`` s.t. ``v + xi . x_j >= V_j`` for all children ``j``.

    Returns ``(v, xi)``; the dual (max over one-step martingale vertices) is
    evaluated as well and the two must agree.
    """
    m = len(increments)
    d = len(increments[0]) if m else 0
    cols = _independent_columns(increments, d)
    r = len(cols)
    best = None
    for J in combinations(range(m), r + 1):
        rows = [[ONE] + [increments[j][c] for c in cols] for j in J]
        sol = _solve_unique(rows, [values[j] for j in J])
        if sol is None:
            continue
        v, xi_r = sol[0], sol[1:]
        if all(
            v + sum((xi_r[a] * increments[j][c] for a, c in enumerate(cols)), ZERO) >= values[j]
            for j in range(m)
        ):
            if best is None or v < best[0]:
                best = (v, xi_r)
    verts = one_step_vertices(increments)
    if best is None or not verts:
        raise MarketArbitrageError("one-step market admits arbitrage")
    dual = max(sum((q * V for q, V in zip(vert, values)), ZERO) for vert in verts)
    if dual != best[0]:
        raise FiniteSpaceError(f"superhedge primal {best[0]} and dual {dual} disagree")
    xi = [ZERO] * d
    for a, c in enumerate(cols):
        xi[c] = best[1][a]
    return best[0], tuple(xi)


def superhedge_price(
    H: FiniteRV,
    market: FiniteMarket,
    t: int = 0,
    polytope: MartingalePolytope | None = None,
) -> SuperhedgeResult:
    """Smallest capital at ``t`` from which a self-financing strategy dominates ``H``.

    ``H`` must be ``F_T``-measurable on the outcomes of positive reference mass.
    Solved by backward induction with exact one-step LPs; the price equals the
    maximum over martingale measures of ``E_Q[H | F_t]``.
    """
    _same_space(H.space, market.space)
    T = market.horizon
    if not 0 <= t <= T:
        raise ValueError(f"time {t} outside 0..{T}")
    if polytope is None:
        polytope = martingale_measures(market)
    if not polytope.has_equivalent:
        raise MarketArbitrageError("market admits no equivalent martingale measure")
    tree = _EventTree(market)
    value: dict[int, Fraction] = {}
    for node in tree.leaves:
        vals = {H.values[i] for i in node.outcomes}
        if len(vals) != 1:
            raise MeasurabilityError(
                f"claim is not F_T-measurable on atom "
                f"{[market.space.outcomes[i] for i in node.outcomes]}"
            )
        value[id(node)] = vals.pop()
    holdings: dict[int, tuple] = {}
    for s in range(T - 1, t - 1, -1):
        for node in tree.levels[s]:
            v, xi = _one_step_superhedge(
                node.increments(), [value[id(ch)] for ch in node.children]
            )
            value[id(node)] = v
            holdings[id(node)] = xi

    space = market.space
    price = [ZERO] * space.size
    for node in tree.levels[t]:
        for i in market.filtration[t].blocks[node.block]:
            price[i] = value[id(node)]
    strategy = []
    for s in range(t, T):
        per_asset = [[ZERO] * space.size for _ in range(market.num_assets)]
        for node in tree.levels[s]:
            for i in market.filtration[s].blocks[node.block]:
                for k in range(market.num_assets):
                    per_asset[k][i] = holdings[id(node)][k]
        strategy.append(tuple(FiniteRV(space, tuple(col)) for col in per_asset))
    node_prices = {
        (node.t, node.block): value[id(node)]
        for s in range(t, T + 1)
        for node in tree.levels[s]
    }
    return SuperhedgeResult(t, FiniteRV(space, tuple(price)), tuple(strategy), node_prices)


def subhedge_price(H: FiniteRV, market: FiniteMarket, t: int = 0, polytope=None) -> FiniteRV:
    """Largest arbitrage-free lower price: ``-superhedge(-H)``."""
    return -superhedge_price(-H, market, t, polytope).price


def hedge_gains(strategy: Sequence[Sequence[FiniteRV]], market: FiniteMarket, t: int = 0) -> FiniteRV:
    """Pathwise gains ``sum_{s >= t} xi_s . (S_{s+1} - S_s)`` of a strategy starting at ``t``."""
    space = market.space
    total = [ZERO] * space.size
    for offset, holding in enumerate(strategy):
        s = t + offset
        for k, xi in enumerate(holding):
            before, after = market.prices[s][k].values, market.prices[s + 1][k].values
            for i in range(space.size):
                total[i] += xi.values[i] * (after[i] - before[i])
    return FiniteRV(space, tuple(total))
