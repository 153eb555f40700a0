"""Compiled vs pure-Python kernels on the shapes used by the environment and policy.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from cellfree_ho import _kernels_py as pure

try:
    from cellfree_ho import _kernels as compiled
except ImportError:
    compiled = None


def cases(rng):
    B = 27
    a = np.zeros(B)
    a[:5] = 1.0
    beta = 10 ** rng.uniform(-12, -6, B)
    psi = 0.1 * beta ** 2 / 5.02e-14
    eta = 1.0 / (8 * (rng.integers(0, 6, B) + 1) * psi)
    rho2 = np.cos(np.arange(184) * 0.01) ** 2
    ws = [rng.standard_normal((108, 64)), rng.standard_normal((64, 64)), rng.standard_normal((64, 54))]
    bs = [np.zeros(64), np.zeros(64), np.zeros(54)]
    x = rng.uniform(-1, 1, 108)
    scores = rng.uniform(-1, 1, B)
    lags = np.arange(201) * 0.0251
    return {
        "j0_array[201]": lambda m: m.j0_array(lags),
        "topk_mask[27,5]": lambda m: m.topk_mask(scores, 5),
        "reward_rate[27]": lambda m: m.reward_rate(a, beta, psi, eta, rho2, 8, 1.0, 5.02e-14, 200, 2.0),
        "dense_forward[108-64-64-54]": lambda m: m.dense_forward(x, ws, bs, False),
    }


def run(repeat: int = 2000) -> dict:
    rng = np.random.default_rng(0)
    out = {}
    for name, fn in cases(rng).items():
        row = {"python_us": min(timeit.repeat(lambda: fn(pure), number=repeat, repeat=5)) / repeat * 1e6}
        if compiled is not None:
            row["compiled_us"] = min(timeit.repeat(lambda: fn(compiled), number=repeat, repeat=5)) / repeat * 1e6
            row["speedup"] = row["python_us"] / row["compiled_us"]
        out[name] = row
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--json")
    args = ap.parse_args()
    res = run(args.repeat)
    width = max(len(k) for k in res)
    print(f"{'kernel':<{width}}  {'python us':>10}  {'compiled us':>11}  {'speedup':>7}")
    for name, row in res.items():
        c = row.get("compiled_us", float("nan"))
        s = row.get("speedup", float("nan"))
        print(f"{name:<{width}}  {row['python_us']:10.2f}  {c:11.2f}  {s:7.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
