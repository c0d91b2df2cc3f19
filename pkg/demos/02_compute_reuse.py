"""Share arithmetic between neighbouring outputs of a linear stencil.

Run with ``python demos/02_compute_reuse.py``. Adjacent outputs of a sliding
window overlap, so a partial sum computed for one output can be delayed and
reused by the next. ORDP searches that space exactly for small kernels and
HSBR is the heuristic that scales to wide ones.
"""
from fractions import Fraction

from stencil_dsa import hsbr, ordp, verify_plan
from stencil_dsa.creuse import LinearStencil, naive_plan


def line(weights):
    taps = tuple(("a", (o,), Fraction(w)) for o, w in enumerate(weights) if w)
    return LinearStencil(taps, (1,))


def show(title, stencil, plans):
    print(title)
    for name, plan in plans:
        assert verify_plan(plan, stencil) is None
        print(f"  {name:<6} {plan.mults} mults, {plan.adds} adds, {plan.delay_elems} delay elements")


box5 = line([1, 1, 1, 1, 1])
show("5-tap box filter", box5, [("naive", naive_plan(box5)), ("ordp", ordp(box5)), ("hsbr", hsbr(box5))])

# a symmetric kernel: equal weights share one multiply, and the inner
# (1, 1) pair repeats across outputs
tri = line([1, 2, 3, 2, 1])
show("(1, 2, 3, 2, 1) filter", tri, [("naive", naive_plan(tri)), ("ordp", ordp(tri))])

# a storage budget trades adds for delay-line elements
for budget in (0, 1, None):
    plan = ordp(box5, storage_budget=budget)
    print(f"box5 with storage budget {budget}: {plan.adds} adds, {plan.delay_elems} delay elements")

wide = line([1] * 16)
plan = hsbr(wide)
print(f"16-tap box via hsbr: {plan.adds} adds (naive {naive_plan(wide).adds})")
