"""Empirical size of the LM pair under a Gaussian OLS world, by lattice size.

Shows how often `select_model` keeps OLS when no spatial process exists.
With two tests at alpha each, the union bound puts that rate at 1 - 2*alpha
or better only once the chi-square approximation holds; small lattices fall short.
"""

import argparse
import warnings

import numpy as np

from tncspatial.econometrics import lm_error_test, lm_lag_test, ols_fit, select_model
from tncspatial.geo import Adjacency
from tncspatial.weights import build_weights


def rook_lattice(rows, cols):
    pairs = [(r * cols + c, r * cols + c + 1) for r in range(rows) for c in range(cols - 1)]
    pairs += [(r * cols + c, (r + 1) * cols + c) for r in range(rows - 1) for c in range(cols)]
    return build_weights(Adjacency.from_pairs(rows * cols, pairs))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sizes", nargs="+", default=["3x4", "4x4", "6x6", "8x8", "10x10"])
    ap.add_argument("--regressors", type=int, default=6, help="covariates besides the intercept")
    ap.add_argument("--sims", type=int, default=2000)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    print(f"{'n':>5} {'lm_lag':>7} {'lm_error':>8} {'keeps OLS':>9}")
    for size in args.sizes:
        rows, cols = map(int, size.split("x"))
        w = rook_lattice(rows, cols)
        n = w.n
        rng = np.random.default_rng(args.seed)
        lag = err = ols = 0
        for _ in range(args.sims):
            X = np.column_stack([np.ones(n), rng.normal(size=(n, args.regressors))])
            fit = ols_fit(X.sum(axis=1) + rng.normal(size=n), X)
            a, b = lm_lag_test(fit, w), lm_error_test(fit, w)
            lag += a.p_value < args.alpha
            err += b.p_value < args.alpha
            ols += select_model(a, b, args.alpha).value == "OLS"
        s = args.sims
        print(f"{n:>5} {lag / s:>7.3f} {err / s:>8.3f} {ols / s:>9.3f}")


if __name__ == "__main__":
    main()
