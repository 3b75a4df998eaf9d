"""Brute-force pool-level MMD values for the estimator-validity acceptance check.

Independent of the library: distances come from the Gram expansion
|x|^2 + |y|^2 - 2 x.y, kernel sums are accumulated per row block with
math.fsum.  Writes tests/oracles/mmd_pool.json.

    python3 scripts/oracle_mmd_pool.py [--pool 100000]
"""

import argparse
import json
import math
import time
from pathlib import Path

import numpy as np

D = 8
SHIFT = 0.5
SCALE = 2.0 * D * 1.0  # IMQ constant for sigma_z^2 = 1


def pools(size):
    """P pool, shifted Q pool, and a second independent P pool."""
    p = np.random.default_rng([4, 0]).standard_normal((size, D))
    q = np.random.default_rng([4, 1]).standard_normal((size, D)) + SHIFT
    p2 = np.random.default_rng([4, 2]).standard_normal((size, D))
    return p, q, p2


def kernel_sum(a, b, exclude_diagonal, block=500):
    na, nb = (a * a).sum(1), (b * b).sum(1)
    parts = []
    for s in range(0, len(a), block):
        sq = na[s:s + block, None] + nb[None, :] - 2.0 * (a[s:s + block] @ b.T)
        np.maximum(sq, 0.0, out=sq)
        k = SCALE / (SCALE + sq)
        if exclude_diagonal:
            idx = np.arange(s, min(s + block, len(a)))
            k[idx - s, idx] = 0.0
        parts.append(float(k.sum(dtype=np.float64)))
    return math.fsum(parts)


def pool_mmd(a, b, kaa):
    n, m = len(a), len(b)
    kbb = kernel_sum(b, b, True)
    kab = kernel_sum(a, b, False)
    return kaa / (n * (n - 1)) + kbb / (m * (m - 1)) - 2.0 * kab / (n * m)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pool", type=int, default=100_000)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "tests/oracles/mmd_pool.json"))
    args = ap.parse_args()
    t0 = time.time()
    p, q, p2 = pools(args.pool)
    kpp = kernel_sum(p, p, True)
    shifted = pool_mmd(p, q, kpp)
    same = pool_mmd(p, p2, kpp)
    result = {"pool_size": args.pool, "dim": D, "shift": SHIFT, "imq_scale": SCALE,
              "seeds": {"p": [4, 0], "q": [4, 1], "p2": [4, 2]},
              "mmd_shifted": shifted, "mmd_same": same, "seconds": round(time.time() - t0, 1)}
    Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
