"""Consistency verdicts for a two-source pair as the separation grows.

Prints the finite-array verdict for several array sizes next to the
large-array test, and the resolution threshold over random amplitude
phases. Run: ``python3 demos/consistency_map.py``
"""

from __future__ import annotations

import numpy as np

from lassodoa.consistency import asymptotic_consistency_test, check_consistency, resolution_threshold_search
from lassodoa.manifold import SparseRepresentation, UlaManifold


def main() -> None:
    print("scaled sep   m=16   m=64   m=256  asymptotic (equal phases)")
    for d in np.pi * np.array([1.0, 1.5, 2.0, 2.5, 3.0]):
        row = []
        for m in (16, 64, 256):
            man = UlaManifold(m)
            rep = SparseRepresentation([0.0, d / m], [1.0, 1.0])
            row.append(check_consistency(man, rep).consistent)
        asym = asymptotic_consistency_test(d, np.ones((2, 2))).passed
        print(f"{d / np.pi:5.2f} pi   " + "  ".join(f"{str(v):5s}" for v in row) + f"  {asym}")
    res = resolution_threshold_search(samples=50)
    print(f"threshold over 50 random phase pairs: {res.threshold / np.pi:.4f} pi")


if __name__ == "__main__":
    main()
