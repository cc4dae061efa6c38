#!/usr/bin/env python3
"""Numerical gradient audit of the classifier's backward pass."""

import argparse

import numpy as np

from chrono_shield.cnn import ModelConfig, grad_check, init_weights
from chrono_shield.synth import render_sign


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--params", type=int, default=500, help="parameters to sample")
    parser.add_argument("--epsilon", type=float, default=1e-4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    weights = init_weights(ModelConfig(), seed=args.seed)
    img = render_sign(0, 64, np.random.default_rng(args.seed))
    err = grad_check(
        weights, (img, 0), epsilon=args.epsilon, max_params=args.params, seed=args.seed
    )
    print(f"max relative error over {args.params} sampled parameters: {err:.3e}")
    if err > 1e-3:
        raise SystemExit("FAIL: exceeds 1e-3")
    print("OK")


if __name__ == "__main__":
    main()
