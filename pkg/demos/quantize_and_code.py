"""Quantize probability rows onto coarse grids and entropy-code the result.

Shows what each bit width does to a handful of soft labels, then codes a
large vote stream and compares the coded size against 32-bit floats.
"""

import numpy as np

from fedsoft import (
    dequantize,
    empirical_entropy,
    entropy_code,
    quantize,
    quantize_matrix,
)


def show_grids():
    rows = np.array(
        [
            [0.70, 0.20, 0.10],
            [0.40, 0.35, 0.25],
            [0.98, 0.01, 0.01],
        ]
    )
    print("row-by-row quantization (k = 2^b - 1 grid steps)")
    for b in (1, 2, 3):
        k = 2**b - 1
        print(f"  b={b} (steps of 1/{k}):")
        for row in rows:
            grid = quantize(row, b, rng=0)
            approx = grid / k
            err = np.abs(approx - row).sum()
            print(f"    {row} -> {grid} ~ {np.round(approx, 3)}  L1 err {err:.3f}")


def code_vote_stream():
    rng = np.random.default_rng(3)
    skewed = rng.dirichlet(np.full(10, 0.05), size=1)[0]
    y = rng.dirichlet(np.full(10, 0.2), size=20_000)
    votes = quantize_matrix(y, 1, rng=1).class_ids
    biased_y = rng.multinomial(1, skewed, size=20_000).astype(float)
    biased = quantize_matrix(biased_y, 1, rng=1).class_ids

    raw_bytes = y.shape[0] * y.shape[1] * 4
    print()
    print(f"20000 soft labels over 10 classes as float32: {raw_bytes:,} B")
    for name, stream in (("spread votes", votes), ("biased votes", biased)):
        coded = entropy_code(stream - 1, 10)
        h = empirical_entropy(stream)
        print(
            f"  {name}: entropy {h:.2f} bits/symbol, "
            f"coded {len(coded):,} B ({raw_bytes / len(coded):,.0f}x smaller)"
        )


def round_trip_note():
    rng = np.random.default_rng(9)
    y = rng.dirichlet(np.ones(4), size=5)
    q = quantize_matrix(y, 2, rng=0)
    back = dequantize(q)
    print()
    print("dequantized values live on the grid, rows still sum to one:")
    print(np.round(back, 3))


if __name__ == "__main__":
    show_grids()
    code_vote_stream()
    round_trip_note()
