"""Regenerate planted_200.csv: 200 candidates, 4 features, one planted HF maximum, affine LF.

    python data/make_planted.py
"""

import csv
from pathlib import Path

import numpy as np

N, D = 200, 4
PEAK = np.array([0.7, 0.25, 0.6, 0.4])
LF_SLOPE, LF_OFFSET = 0.8, 1.5


def build(seed: int = 2024):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(N, D))
    X[17] = PEAK  # the planted optimum
    d2 = np.sum((X - PEAK) ** 2, axis=1)
    hf = 2.0 * np.exp(-d2 / (2 * 0.2**2)) + 0.5 * np.sin(3 * X[:, 0]) * np.cos(2 * X[:, 1]) - 0.3 * X[:, 3]
    lf = LF_SLOPE * hf + LF_OFFSET
    return X, hf, lf


def main():
    X, hf, lf = build()
    path = Path(__file__).with_name("planted_200.csv")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"f{j}" for j in range(D)] + ["hf", "lf"])
        for i in range(N):
            w.writerow([f"c{i:03d}"] + [repr(float(v)) for v in X[i]] + [repr(float(hf[i])), repr(float(lf[i]))])
    print(f"wrote {path}; planted optimum c017, hf = {hf[17]:.6f}, runner-up {np.sort(hf)[-2]:.6f}")


if __name__ == "__main__":
    main()
