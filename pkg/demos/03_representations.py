"""Check the two-step representations behind the ordering.

Each pair of kernels is written as: pick an index a, then move inside the
fiber of a with a kernel that is reversible and positive. When both kernels
share the index distribution and fibers, and the second one's fiber move is
absorbed by the first, the first kernel dominates. All three conditions are
checked numerically here, then deliberately broken.
"""
from chainorder.lab import GridSpec
from chainorder.representation import (PAIRS, build_representation, check_all,
                                       corrupt_representation)
from chainorder.targets import cone

grid = GridSpec.from_target(cone(1), 8)

for pair in PAIRS:
    rep1, rep2 = build_representation(pair, grid)
    reports = check_all(rep1, rep2)
    summary = ", ".join(f"{r.check}={r.verdict}" for r in reports)
    print(f"{pair:>17}: {summary}")

rep1, rep2 = build_representation("simple_vs_hybrid", grid)
broken = check_all(corrupt_representation(rep1), rep2)
print("\nafter tilting one fiber row:")
for r in broken:
    print(f"  {r.check}: {r.verdict} (worst residual {r.worst:.2e})")
