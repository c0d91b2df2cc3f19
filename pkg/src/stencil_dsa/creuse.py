"""Computation reuse for linear stencil stages.

A plan is a DAG whose nodes are evaluated once per stream position ``p``.
An operand ``(node, shift, sign)`` reads ``sign * node(p + shift)``, so
reading one node at several shifts is a delay line over that node's values
(shift-reuse). Plans for linear stages are built from *forms*: weighted tap
sets up to translation and sign. Computing a form once and consuming it at
several shifts trades adds for delay storage.

``ordp`` searches exactly for the plan with the fewest operations over the
space of plans whose intermediate values are sub-sums of the stencil;
``hsbr`` is a greedy pairing heuristic for larger kernels.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

from . import dsl
from .errors import StencilError
from .ir import linearize

ORDP_MAX_TAPS = 10


class TooManyTaps(StencilError):
    pass


class InfeasibleBudget(StencilError):
    pass


# --------------------------------------------------------------------------
# linear stencils

@dataclass(frozen=True)
class LinearStencil:
    taps: tuple[tuple[str, tuple[int, ...], Fraction], ...]  # (array, offset, weight)
    strides: tuple[int, ...]

    @property
    def weights(self) -> dict:
        return {(a, o): w for a, o, w in self.taps}

    def lin_weights(self) -> dict:
        return {(a, linearize(o, self.strides)): w for a, o, w in self.taps}

    def terms(self) -> list[tuple[str, int, Fraction]]:
        """(array, linear offset, weight), sorted by position."""
        return sorted(((a, linearize(o, self.strides), w) for a, o, w in self.taps), key=lambda t: (t[1], t[0]))

    @property
    def nontrivial_weights(self) -> set:
        return {abs(w) for _, _, w in self.taps if abs(w) != 1}


@dataclass(frozen=True)
class NotLinear:
    reason: str

    def __bool__(self):
        return False


class _Nonlinear(Exception):
    pass


def _affine(expr, integer):
    """Return (coefficients, constant) of an affine expression."""
    if isinstance(expr, dsl.Num):
        return {}, expr.value
    if isinstance(expr, dsl.Tap):
        return {(expr.array, expr.offsets): Fraction(1)}, Fraction(0)
    if isinstance(expr, dsl.Neg):
        c, k = _affine(expr.operand, integer)
        return {t: -w for t, w in c.items()}, -k
    lc, lk = _affine(expr.left, integer)
    rc, rk = _affine(expr.right, integer)
    if expr.op in "+-":
        s = 1 if expr.op == "+" else -1
        out = dict(lc)
        for t, w in rc.items():
            out[t] = out.get(t, 0) + s * w
        return out, lk + s * rk
    if expr.op == "*":
        if lc and rc:
            raise _Nonlinear("product of taps")
        if not lc:
            lc, lk, rc, rk = rc, rk, lc, lk
        return {t: w * rk for t, w in lc.items()}, lk * rk
    if rc:
        raise _Nonlinear("division by a tap expression")
    if integer:
        raise _Nonlinear("integer division truncates")
    return {t: w / rk for t, w in lc.items()}, lk / rk


def extract_linear(stage: dsl.StageDecl, strides) -> Union[LinearStencil, NotLinear]:
    try:
        coeffs, const = _affine(stage.expr, not dsl.is_float_type(stage.elem_type))
    except _Nonlinear as e:
        return NotLinear(str(e))
    if const != 0:
        return NotLinear("constant term")
    taps = tuple(sorted((a, o, w) for (a, o), w in coeffs.items() if w != 0))
    return LinearStencil(taps, tuple(strides))


# --------------------------------------------------------------------------
# plans

@dataclass(frozen=True)
class Operand:
    node: int
    shift: int = 0
    sign: int = 1


@dataclass(frozen=True)
class Node:
    op: str  # input | const | scale | add | mul | div
    args: tuple[Operand, ...] = ()
    weight: Optional[Fraction] = None  # scale factor or constant value
    array: Optional[str] = None


@dataclass(frozen=True)
class ComputePlan:
    nodes: tuple[Node, ...]
    root: Optional[Operand]  # None: the stage is identically zero
    mode: str = "off"
    optimal: bool = False

    @property
    def mults(self) -> int:
        return sum(1 for n in self.nodes if n.op in ("scale", "mul", "div"))

    @property
    def adds(self) -> int:
        return sum(1 for n in self.nodes if n.op == "add")

    @property
    def ops(self) -> int:
        return self.mults + self.adds

    @property
    def delay_elems(self) -> int:
        return delay_storage(self)

    @property
    def depth(self) -> int:
        levels = []
        for n in self.nodes:
            if n.op in ("input", "const"):
                levels.append(0)
            else:
                levels.append(1 + max(levels[a.node] for a in n.args))
        return 0 if self.root is None else levels[self.root.node]

    def cost(self, mult_ratio: float = 1.0) -> float:
        return self.adds + mult_ratio * self.mults

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "mults_per_output": self.mults,
            "adds_per_output": self.adds,
            "delay_elems": self.delay_elems,
            "depth": self.depth,
            "nodes": [
                {
                    "op": n.op,
                    **({"array": n.array} if n.array else {}),
                    **({"weight": str(n.weight)} if n.weight is not None else {}),
                    "args": [[a.node, a.shift, a.sign] for a in n.args],
                }
                for n in self.nodes
            ],
            "root": None if self.root is None else [self.root.node, self.root.shift, self.root.sign],
        }


def delay_storage(plan: ComputePlan) -> int:
    """Elements of delay lines needed to read nodes at several shifts.

    A node is computed once per position, at the earliest shift anyone reads it;
    its children are read relative to that frame. Inputs and constants are free
    (inputs live in the reuse buffer).
    """
    if plan.root is None:
        return 0
    refs: list[list[int]] = [[] for _ in plan.nodes]
    refs[plan.root.node].append(plan.root.shift)
    total = 0
    for idx in range(len(plan.nodes) - 1, -1, -1):
        node = plan.nodes[idx]
        if not refs[idx] or node.op in ("input", "const"):
            continue
        frame = min(refs[idx])
        total += max(refs[idx]) - frame
        for a in node.args:
            refs[a.node].append(frame + a.shift)
    return total


class _Builder:
    def __init__(self):
        self.nodes: list[Node] = []
        self.index: dict[Node, int] = {}

    def add(self, node: Node, share: bool = True) -> int:
        if share and node in self.index:
            return self.index[node]
        self.nodes.append(node)
        idx = len(self.nodes) - 1
        if share:
            self.index[node] = idx
        return idx

    def input(self, array) -> int:
        return self.add(Node("input", array=array))


def expression_plan(expr: dsl.Expr, strides) -> ComputePlan:
    """Direct transcription of a stage expression, in source evaluation order."""
    b = _Builder()

    def visit(e) -> Operand:
        if isinstance(e, dsl.Num):
            return Operand(b.add(Node("const", weight=e.value)))
        if isinstance(e, dsl.Tap):
            return Operand(b.input(e.array), linearize(e.offsets, strides))
        if isinstance(e, dsl.Neg):
            inner = visit(e.operand)
            return Operand(inner.node, inner.shift, -inner.sign)
        left, right = visit(e.left), visit(e.right)
        if e.op == "-":
            right = Operand(right.node, right.shift, -right.sign)
        op = {"+": "add", "-": "add", "*": "mul", "/": "div"}[e.op]
        return Operand(b.add(Node(op, (left, right)), share=False))

    root = visit(expr)
    return ComputePlan(tuple(b.nodes), root, "off")


# --------------------------------------------------------------------------
# forms

Term = tuple  # (linear offset, array, weight)


def canonical(terms) -> tuple[tuple, int, int]:
    """(form, base, sign) with form translated to start at 0 and a positive first weight."""
    terms = sorted(terms)
    base = terms[0][0]
    sign = 1 if terms[0][2] > 0 else -1
    form = tuple((lin - base, a, w * sign) for lin, a, w in terms)
    return form, base, sign


def _zero_plan(mode) -> ComputePlan:
    return ComputePlan((), None, mode, True)


def naive_plan(stencil: LinearStencil, mode="naive") -> ComputePlan:
    """One multiply per non-unit weight and a left-to-right chain of adds."""
    terms = stencil.terms()
    if not terms:
        return _zero_plan(mode)
    b = _Builder()
    acc = None
    for array, lin, w in terms:
        if abs(w) == 1:
            op = Operand(b.input(array), lin, 1 if w > 0 else -1)
        else:
            idx = b.add(Node("scale", (Operand(b.input(array)),), weight=abs(w)), share=False)
            op = Operand(idx, lin, 1 if w > 0 else -1)
        acc = op if acc is None else Operand(b.add(Node("add", (acc, op)), share=False))
    return ComputePlan(tuple(b.nodes), acc, mode, False)


def _shareable_products(terms) -> list:
    counts: dict = {}
    for lin, array, w in terms:
        if abs(w) != 1:
            key = (array, abs(w))
            counts[key] = counts.get(key, 0) + 1
    return sorted(k for k, c in counts.items() if c > 1)


def _product_choices(terms, budget):
    """Subsets of repeated products to compute once; with no budget sharing all is best."""
    keys = _shareable_products(terms)
    if budget is None:
        yield frozenset(keys)
        return
    for r in range(len(keys), -1, -1):
        for subset in itertools.combinations(keys, r):
            yield frozenset(subset)


def _check_budget(storage_budget):
    if storage_budget is not None and storage_budget < 0:
        raise InfeasibleBudget(f"storage budget must be >= 0, got {storage_budget}")


def _rank(plan: ComputePlan, ratio: float):
    return (plan.cost(ratio), plan.delay_elems)


# --------------------------------------------------------------------------
# ORDP: exact search

class _SearchLimit(Exception):
    pass


def _occurrences(raw):
    """Canonical form -> list of (mask, base, sign) over all non-empty subsets of the terms."""
    n = len(raw)
    occ: dict = {}
    for mask in range(1, 1 << n):
        form, base, sign = canonical([raw[i] for i in range(n) if mask >> i & 1])
        occ.setdefault(form, []).append((mask, base, sign))
    return occ


def _repeatable(occ) -> set:
    """Forms of two or more terms with at least two disjoint occurrences.

    Only such forms can be read at two different shifts, so only they are
    worth computing as shared nodes; everything else is glue.
    """
    out = set()
    for form, places in occ.items():
        if len(form) < 2:
            continue
        masks = [m for m, _, _ in places]
        if any(a & b == 0 for a, b in itertools.combinations(masks, 2)):
            out.add(form)
    return out


def _placements(host, guest):
    """Ways to place ``guest`` inside ``host``: (mask over host terms, shift, sign)."""
    index = {(lin, a): (i, w) for i, (lin, a, w) in enumerate(host)}
    g0 = guest[0]
    out = []
    for lin, a, w in host:
        if a != g0[1]:
            continue
        ratio = w / g0[2]
        if ratio not in (1, -1):
            continue
        shift = lin - g0[0]
        mask = 0
        for glin, ga, gw in guest:
            hit = index.get((glin + shift, ga))
            if hit is None or hit[1] != gw * ratio:
                break
            mask |= 1 << hit[0]
        else:
            out.append((mask, shift, int(ratio)))
    return out


def _build_from_covers(target, base, sign, choice, shared_products, mode, optimal) -> ComputePlan:
    """Materialize a plan: every shared form is a balanced sum of its pieces."""
    b = _Builder()
    products: dict = {}
    made: dict = {}

    def leaf(term, shift, s) -> Operand:
        lin, array, w = term
        s = s * (1 if w > 0 else -1)
        w = abs(w)
        if w == 1:
            return Operand(b.input(array), shift + lin, s)
        key = (array, w)
        if key in shared_products:
            if key not in products:
                products[key] = b.add(Node("scale", (Operand(b.input(array)),), weight=w), share=False)
            return Operand(products[key], shift + lin, s)
        idx = b.add(Node("scale", (Operand(b.input(array)),), weight=w), share=False)
        return Operand(idx, shift + lin, s)

    def build(form) -> int:
        if form in made:
            return made[form]
        ops = []
        for piece, shift, s in choice[form]:
            if len(piece) == 1:
                ops.append(leaf(piece[0], shift, s))
            else:
                ops.append(Operand(build(piece), shift, s))
        while len(ops) > 1:
            nxt = [Operand(b.add(Node("add", (ops[i], ops[i + 1])), share=False)) for i in range(0, len(ops) - 1, 2)]
            if len(ops) % 2:
                nxt.append(ops[-1])
            ops = nxt
        made[form] = ops[0].node  # covers have >= 2 pieces, so this is a fresh add
        return ops[0].node

    if len(target) == 1:
        root = leaf(target[0], base, sign)
    else:
        root = Operand(build(target), base, sign)
    return ComputePlan(tuple(b.nodes), root, mode, optimal)


def _cover_search(target, repeatable, shared_products, ratio, budget, incumbent, node_limit, finish):
    """Depth-first branch and bound over sets of shared forms.

    Each shared form (and the target) is covered exactly by pieces: single
    terms or translates of smaller shared forms. A cover with ``p`` pieces
    costs ``p - 1`` adds; a non-shared non-unit single term costs a multiply.
    Every pending form still needs at least one add, which is the bound.
    """
    best = {"cost": incumbent, "plans": []}
    seen: dict = {}
    expanded = [0]
    candidates: dict = {}

    def pieces_for(host):
        if host not in candidates:
            by_low: list[list] = [[] for _ in host]
            for i in range(len(host)):
                by_low[i].append((1 << i, (host[i],), 0, 1, None))
            for form in repeatable:
                if len(form) >= len(host):
                    continue
                for mask, shift, s in _placements(host, form):
                    low = (mask & -mask).bit_length() - 1
                    by_low[low].append((mask, form, shift, s, form))
            for lst in by_low:
                lst.sort(key=lambda p: -bin(p[0]).count("1"))
            candidates[host] = by_low
        return candidates[host]

    def leaf_cost(piece):
        lin, array, w = piece[0]
        if abs(w) != 1 and (array, abs(w)) not in shared_products:
            return ratio
        return 0.0

    def tick():
        expanded[0] += 1
        if expanded[0] > node_limit:
            raise _SearchLimit()

    def solve(choice, pending, cost):
        tick()
        if cost + len(pending) > best["cost"] + 1e-9:
            return
        if not pending:
            plan = finish(choice)
            if budget is not None and plan.delay_elems > budget:
                return
            if cost < best["cost"] - 1e-9:
                best["cost"] = cost
                best["plans"] = [plan]
            else:
                best["plans"].append(plan)
            return
        key = (frozenset(choice), tuple(sorted(pending)))
        if seen.get(key, float("inf")) <= cost:
            return
        seen[key] = cost
        host = pending[0]
        rest = pending[1:]
        by_low = pieces_for(host)
        full = (1 << len(host)) - 1

        def cover(covered, pieces, extra, new):
            tick()
            remaining = 1 if covered != full else 0
            bound = cost + max(len(pieces) + remaining - 1, 0) + extra + len(rest) + len(new)
            if bound > best["cost"] + 1e-9:
                return
            if covered == full:
                if len(pieces) < 2:
                    return
                choice[host] = tuple(pieces)
                solve(choice, rest + new, cost + len(pieces) - 1 + extra)
                del choice[host]
                return
            low = (~covered & full & -(~covered & full)).bit_length() - 1
            for mask, piece, shift, s, form in by_low[low]:
                if mask & covered:
                    continue
                add_new = []
                if form is not None and form not in choice and form not in rest and form not in new:
                    add_new = [form]
                pieces.append((piece, shift, s))
                cover(covered | mask, pieces, extra + (leaf_cost(piece) if form is None else 0.0), new + add_new)
                pieces.pop()

        cover(0, [], 0.0, [])

    solve({}, [target], 0.0)
    return best["plans"]


def ordp(stencil: LinearStencil, storage_budget: Optional[int] = None, mult_ratio: float = 1.0,
         node_limit: int = 400_000) -> ComputePlan:
    """Minimum-operation plan subject to ``delay_elems <= storage_budget``.

    ``storage_budget=None`` means unlimited. Ties go to less storage, then to the
    first plan found in a fixed enumeration order. The search is seeded with the
    heuristic plan; if it hits ``node_limit`` the best plan found so far is
    returned with ``optimal=False``.
    """
    _check_budget(storage_budget)
    if len(stencil.taps) > ORDP_MAX_TAPS:
        raise TooManyTaps(f"{len(stencil.taps)} taps exceed the exact-search limit of {ORDP_MAX_TAPS}; use hsbr")
    raw = [(lin, a, w) for a, lin, w in stencil.terms()]
    if not raw:
        return _zero_plan("ordp")
    naive = naive_plan(stencil, "ordp")
    if storage_budget == 0 or len(raw) == 1:
        return ComputePlan(naive.nodes, naive.root, "ordp", True)
    target, base, sign = canonical(raw)
    occ = _occurrences(raw)
    repeatable = sorted(_repeatable(occ), key=lambda f: (-len(f), f))

    best_plan = naive
    seed_plan = hsbr(stencil, storage_budget, mult_ratio=mult_ratio)
    if _rank(seed_plan, mult_ratio) < _rank(best_plan, mult_ratio):
        best_plan = seed_plan
    optimal = True
    for shared in _product_choices(raw, storage_budget):
        upfront = mult_ratio * len(shared)

        def finish(choice, shared=shared):
            return _build_from_covers(target, base, sign, choice, shared, "ordp", True)

        incumbent = best_plan.cost(mult_ratio) - upfront
        try:
            plans = _cover_search(target, repeatable, shared, mult_ratio, storage_budget, incumbent, node_limit, finish)
        except _SearchLimit:
            optimal = False
            continue
        for plan in plans:
            if _rank(plan, mult_ratio) < _rank(best_plan, mult_ratio):
                best_plan = plan
    return ComputePlan(best_plan.nodes, best_plan.root, "ordp", optimal)


# --------------------------------------------------------------------------
# HSBR: greedy pairing

@dataclass
class _Item:
    coeffs: dict  # (array, lin) -> weight, absolute positions
    operand: Operand

    @property
    def base(self):
        return min(lin for _, lin in self.coeffs)


def _canon_coeffs(coeffs):
    return canonical([(lin, a, w) for (a, lin), w in coeffs.items()])


def _hsbr_once(terms, storage_budget, rng: Optional[random.Random], expansion_limit):
    b = _Builder()
    budget_left = float("inf") if storage_budget is None else storage_budget

    # share products greedily, most frequent first
    groups: dict = {}
    for array, lin, w in terms:
        if abs(w) != 1:
            groups.setdefault((array, abs(w)), []).append(lin)
    shared = {}
    for key in sorted(groups, key=lambda k: (-len(groups[k]), k)):
        lins = groups[key]
        rng_cost = max(lins) - min(lins)
        if len(lins) > 1 and rng_cost <= budget_left:
            budget_left -= rng_cost
            shared[key] = b.add(Node("scale", (Operand(b.input(key[0])),), weight=key[1]), share=False)

    items = []
    for array, lin, w in terms:
        s = 1 if w > 0 else -1
        if abs(w) == 1:
            op = Operand(b.input(array), lin, s)
        elif (array, abs(w)) in shared:
            op = Operand(shared[(array, abs(w))], lin, s)
        else:
            op = Operand(b.add(Node("scale", (Operand(b.input(array)),), weight=abs(w)), share=False), lin, s)
        items.append(_Item({(array, lin): w}, op))

    expansions = 0
    while len(items) > 2:
        patterns: dict = {}
        for i, j in itertools.combinations(range(len(items)), 2):
            expansions += 1
            merged = dict(items[i].coeffs)
            merged.update(items[j].coeffs)
            form, base, sgn = _canon_coeffs(merged)
            patterns.setdefault(form, []).append((base, i, j, sgn))
        if expansions > expansion_limit:
            break
        candidates = []
        for form, occs in patterns.items():
            occs.sort()
            used = set()
            chosen = []
            for base, i, j, sgn in occs:
                if i in used or j in used:
                    continue
                used.update((i, j))
                chosen.append((base, i, j, sgn))
            if len(chosen) < 2:
                continue
            cost = chosen[-1][0] - chosen[0][0]
            if cost > budget_left:
                # keep the longest affordable prefix
                while len(chosen) >= 2 and chosen[-1][0] - chosen[0][0] > budget_left:
                    chosen.pop()
                if len(chosen) < 2:
                    continue
                cost = chosen[-1][0] - chosen[0][0]
            saving = (len(chosen) - 1) * 1
            candidates.append((len(chosen), len(form), saving, form, chosen, cost))
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c[0], -c[1], c[3]))
        top = [c for c in candidates if c[0] == candidates[0][0] and c[1] == candidates[0][1]]
        pick = top[rng.randrange(len(top))] if (rng is not None and len(top) > 1) else top[0]
        _, _, _, form, chosen, cost = pick
        budget_left -= cost
        base0, i0, j0, s0 = chosen[0]
        node = b.add(Node("add", (items[i0].operand, items[j0].operand)), share=False)
        replaced = set()
        new_items = []
        for base, i, j, sgn in chosen:
            merged = dict(items[i].coeffs)
            merged.update(items[j].coeffs)
            new_items.append(_Item(merged, Operand(node, base - base0, sgn * s0)))
            replaced.update((i, j))
        items = [it for k, it in enumerate(items) if k not in replaced] + new_items
        items.sort(key=lambda it: (it.base, sorted(it.coeffs)))

    # balanced reduction of what is left
    ops = [it.operand for it in sorted(items, key=lambda it: (it.base, sorted(it.coeffs)))]
    while len(ops) > 1:
        nxt = []
        for i in range(0, len(ops) - 1, 2):
            nxt.append(Operand(b.add(Node("add", (ops[i], ops[i + 1])), share=False)))
        if len(ops) % 2:
            nxt.append(ops[-1])
        ops = nxt
    return ComputePlan(tuple(b.nodes), ops[0], "hsbr", False)


def hsbr(stencil: LinearStencil, storage_budget: Optional[int] = None, seed: int = 0,
         restarts: int = 4, mult_ratio: float = 1.0, expansion_limit: int = 2_000_000) -> ComputePlan:
    """Greedy most-frequent-pair common-subexpression sharing with seeded restarts.

    The first pass breaks ties deterministically; each restart breaks them with
    a generator seeded from ``seed``. The best plan (ops, then storage) wins,
    and the naive plan is the floor.
    """
    _check_budget(storage_budget)
    terms = stencil.terms()
    if not terms:
        return _zero_plan("hsbr")
    best = naive_plan(stencil, "hsbr")
    runs = [None] + [random.Random(seed * 1000003 + r) for r in range(restarts)]
    for rng in runs:
        plan = _hsbr_once(terms, storage_budget, rng, expansion_limit)
        if storage_budget is not None and plan.delay_elems > storage_budget:
            continue
        if _rank(plan, mult_ratio) < _rank(best, mult_ratio):
            best = plan
    return ComputePlan(best.nodes, best.root, "hsbr", False)


# --------------------------------------------------------------------------
# verification

@dataclass(frozen=True)
class CounterexampleReport:
    offset: tuple
    array: str
    expected: Fraction
    got: Fraction

    def __str__(self):
        return f"coefficient of {self.array}{self.offset}: expected {self.expected}, got {self.got}"


class _NotAffine(Exception):
    pass


def expand(plan: ComputePlan) -> dict:
    """Symbolic weighted tap sum {(array, linear offset): weight} of a plan."""
    if plan.root is None:
        return {}
    values: list = []
    for node in plan.nodes:
        if node.op == "input":
            values.append(({(node.array, 0): Fraction(1)}, Fraction(0)))
        elif node.op == "const":
            values.append(({}, node.weight))
        else:
            args = []
            for a in node.args:
                c, k = values[a.node]
                args.append(({(arr, lin + a.shift): a.sign * w for (arr, lin), w in c.items()}, a.sign * k))
            if node.op == "scale":
                c, k = args[0]
                values.append(({t: node.weight * w for t, w in c.items()}, node.weight * k))
            elif node.op == "add":
                out = dict(args[0][0])
                for t, w in args[1][0].items():
                    out[t] = out.get(t, 0) + w
                values.append(({t: w for t, w in out.items() if w != 0}, args[0][1] + args[1][1]))
            elif node.op == "mul":
                (lc, lk), (rc, rk) = args
                if lc and rc:
                    raise _NotAffine()
                if not lc:
                    lc, lk, rc, rk = rc, rk, lc, lk
                values.append(({t: w * rk for t, w in lc.items()}, lk * rk))
            else:
                (lc, lk), (rc, rk) = args
                if rc or rk == 0:
                    raise _NotAffine()
                values.append(({t: w / rk for t, w in lc.items()}, lk / rk))
    c, k = values[plan.root.node]
    r = plan.root
    out = {(arr, lin + r.shift): r.sign * w for (arr, lin), w in c.items()}
    if k != 0:
        out[("<const>", 0)] = r.sign * k
    return out


def verify_plan(plan: ComputePlan, stencil: LinearStencil) -> Optional[CounterexampleReport]:
    """None if the plan computes exactly the stencil, else the first differing coefficient."""
    expected = stencil.lin_weights()
    back = {(a, linearize(o, stencil.strides)): o for a, o, _ in stencil.taps}
    try:
        got = expand(plan)
    except _NotAffine:
        return CounterexampleReport((), "<nonlinear>", Fraction(0), Fraction(0))
    for key in sorted(set(expected) | set(got), key=lambda t: (t[1], t[0])):
        e = expected.get(key, Fraction(0))
        g = got.get(key, Fraction(0))
        if e != g:
            array, lin = key
            return CounterexampleReport(back.get(key, (lin,)), array, e, g)
    return None


# --------------------------------------------------------------------------
# stage-level entry point

CREUSE_MODES = ("off", "ordp", "hsbr", "auto")


def plan_stage(stage: dsl.StageDecl, strides, mode: str = "off", storage_budget: Optional[int] = None,
               seed: int = 0, mult_ratio: float = 1.0) -> ComputePlan:
    """Compute plan for one stage.

    ``off`` transcribes the expression. The reuse modes apply to linear stages
    and keep the transcription when it is already cheaper (e.g. a common
    factor that the linear form spreads over every tap).
    """
    if mode not in CREUSE_MODES:
        raise ValueError(f"unknown creuse mode {mode!r}")
    direct = expression_plan(stage.expr, strides)
    if mode == "off":
        return direct
    stencil = extract_linear(stage, strides)
    if not stencil:
        return direct
    if mode == "auto":
        mode = "ordp" if len(stencil.taps) <= ORDP_MAX_TAPS else "hsbr"
    if mode == "ordp":
        if len(stencil.taps) > ORDP_MAX_TAPS:
            raise TooManyTaps(f"stage {stage.name!r} has {len(stencil.taps)} taps; use hsbr")
        plan = ordp(stencil, storage_budget, mult_ratio)
    else:
        plan = hsbr(stencil, storage_budget, seed, mult_ratio=mult_ratio)
    if _rank(direct, mult_ratio) < _rank(plan, mult_ratio):
        return ComputePlan(direct.nodes, direct.root, plan.mode, plan.optimal)
    return plan
