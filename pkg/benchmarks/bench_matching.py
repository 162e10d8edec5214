"""Compare the compiled and pure-Python matching kernels.

    python benchmarks/bench_matching.py [--size 256] [--repeat 5]

Builds candidate graphs from synthetic edge maps (ground truth plus a
jittered, partly spurious prediction), then times Hopcroft-Karp and greedy
matching on both backends and checks that they agree.
"""

import argparse
import time

import numpy as np

from swbce import _matching_py
from swbce.metrics import candidate_pairs
from swbce.synth import SceneSpec, generate

try:
    from swbce import _matching as _matching_ext
except ImportError:
    _matching_ext = None


def make_case(size, seed):
    gt = generate(SceneSpec(seed=seed, size=(size, size), shape_count=8)).edges
    rng = np.random.default_rng(seed)
    rows, cols = np.nonzero(gt)
    pred = np.zeros_like(gt)
    jr = np.clip(rows + rng.integers(-1, 2, rows.size), 0, size - 1)
    jc = np.clip(cols + rng.integers(-1, 2, cols.size), 0, size - 1)
    pred[jr, jc] = True
    pred |= rng.random(gt.shape) < 0.02
    return pred, gt


def graph(pred, gt, tol):
    left, right, dist2 = candidate_pairs(pred, gt, tol)
    n_pred, n_gt = int(pred.sum()), int(gt.sum())
    indptr = np.zeros(n_pred + 1, dtype=np.int64)
    np.cumsum(np.bincount(left, minlength=n_pred), out=indptr[1:])
    order = np.lexsort((right, left, dist2))
    return indptr, right, left[order], right[order], n_pred, n_gt


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--tol", type=float, default=2.0)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    pred, gt = make_case(args.size, args.seed)
    indptr, adj, gl, gr, n_pred, n_gt = graph(pred, gt, args.tol)
    print(f"{args.size}x{args.size}  pred={n_pred}  gt={n_gt}  edges={adj.size}  tol={args.tol}")

    backends = [("python", _matching_py)]
    if _matching_ext is not None:
        backends.append(("cython", _matching_ext))
    else:
        print("compiled kernel not built; timing pure Python only")

    results = {}
    for name, mod in backends:
        t_hk, hk = best_of(lambda: mod.hopcroft_karp(indptr, adj, n_gt), args.repeat)
        t_gr, gm = best_of(lambda: mod.greedy_match(gl, gr, n_pred, n_gt), args.repeat)
        results[name] = (t_hk, t_gr, hk, gm)
        print(f"{name:>7}  hopcroft_karp {t_hk * 1e3:9.3f} ms  (tp={int((hk >= 0).sum())})"
              f"   greedy {t_gr * 1e3:9.3f} ms  (tp={int((gm >= 0).sum())})")

    if "cython" in results:
        py, cy = results["python"], results["cython"]
        assert np.array_equal(py[2], cy[2]) and np.array_equal(py[3], cy[3]), "backends disagree"
        print(f"speedup  hopcroft_karp x{py[0] / cy[0]:.1f}   greedy x{py[1] / cy[1]:.1f}")


if __name__ == "__main__":
    main()
