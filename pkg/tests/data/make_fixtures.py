"""Regenerate the synthetic CSV fixtures: ``python3 tests/data/make_fixtures.py``.

Both files follow an exact bent line (``*_noiseless.csv``) or the same line
plus small normal noise (``*_noisy.csv``); the true coefficients are in TRUTH.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent

# (intercept, [hopper,] beta, gamma, tau)
TRUTH = {
    "stream": {"alpha": [-0.0053], "beta": 0.0119, "gamma": 0.0733, "tau": 1.5394},
    "mammals": {"alpha": [3.208, 0.640], "beta": 0.285, "gamma": -0.409, "tau": 3.658},
}


def _hinge(z, t):
    return np.maximum(z - t, 0.0)


def make_stream(rng, noise):
    # 76 rows: response, threshold covariate in (0, 3)
    t = TRUTH["stream"]
    z = np.round(np.sort(rng.uniform(0.05, 3.0, 76)), 4)
    y = t["alpha"][0] + t["beta"] * z + t["gamma"] * _hinge(z, t["tau"]) + noise * rng.standard_normal(76)
    return ["fraction", "log_area"], np.column_stack([y, z])


def make_mammals(rng, noise):
    # 107 rows: log speed, log mass, 0/1 hopper indicator
    t = TRUTH["mammals"]
    z = np.round(rng.uniform(-1.5, 8.5, 107), 4)
    hop = (rng.random(107) < 0.15).astype(float)
    y = (t["alpha"][0] + t["alpha"][1] * hop + t["beta"] * z + t["gamma"] * _hinge(z, t["tau"])
         + noise * rng.standard_normal(107))
    return ["log_speed", "log_mass", "hopper"], np.column_stack([y, z, hop])


def write(path, header, arr):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in arr:
            w.writerow([repr(float(v)) for v in row])


def main():
    for name, maker, noise in (("stream", make_stream, 0.01), ("mammals", make_mammals, 0.25)):
        for label, sd in (("noiseless", 0.0), ("noisy", noise)):
            header, arr = maker(np.random.default_rng(7), sd)
            write(HERE / f"{name}_{label}.csv", header, arr)


if __name__ == "__main__":
    main()
