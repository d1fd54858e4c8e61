#!/usr/bin/env python3
"""Generate a synthetic grayscale test image as PGM.

The toolkit does not ship photographs; this produces a deterministic image
with smooth shading, oriented texture, and a few sharp edges, which is enough
structure for the denoiser and the reconstruction experiments.
"""

import argparse

import numpy as np

from pnpcert import Image, save_pgm


def synthesize(rows: int, cols: int) -> Image:
    r = np.arange(rows)[:, None] / max(rows - 1, 1)
    c = np.arange(cols)[None, :] / max(cols - 1, 1)
    g = 0.45 + 0.25 * np.sin(4 * np.pi * r) * np.cos(6 * np.pi * c) + 0.2 * (c - 0.5)
    g = g + 0.15 * ((r - 0.35) ** 2 + (c - 0.6) ** 2 < 0.04)   # a disc
    g = g + 0.1 * ((r > 0.7) & (c < 0.3))                      # a block
    return Image.from_grid(np.clip(g, 0.0, 1.0))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=128)
    parser.add_argument("--cols", type=int, default=128)
    parser.add_argument("--out", default="test_image.pgm")
    args = parser.parse_args()
    save_pgm(synthesize(args.rows, args.cols), args.out)
    print(f"wrote {args.out} ({args.rows}x{args.cols})")


if __name__ == "__main__":
    main()
