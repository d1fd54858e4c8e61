"""Matrix-free forward operators with exact adjoints.

Three measurement models on a rows x cols pixel grid:

* ``inpaint``  -- row selection of a random pixel subset,
* ``blur``     -- 2-D circular convolution with a normalized nonnegative kernel,
* ``superres`` -- circular blur followed by stride-``factor`` decimation.

Circular boundary handling keeps the adjoint exact and the Gram operator a
convolution. Adjoints are built from the same tap set with negated shifts, so
the adjoint identity holds to rounding error by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import Image, Rng, gaussian_noise, load_pgm, save_pgm

_POWER_SEED = 0x9D2C5680  # fixed start for power iterations


@dataclass(frozen=True)
class PowerEstimate:
    """Dominant-eigenvalue estimate from power iteration."""

    value: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class ForwardOp:
    """Linear measurement operator A acting on flat row-major images."""

    kind: str  # "inpaint" | "blur" | "superres"
    rows_in: int
    cols_in: int
    m: int
    mask: np.ndarray | None = None    # bool, length n (inpaint)
    kernel: np.ndarray | None = None  # 2-D taps summing to 1 (blur/superres)
    factor: int = 1
    # rank-1 factorization (col, row) of the kernel when it is exactly
    # separable (Gaussians are); same map, one roll per 1-D tap
    kernel_sep: tuple | None = None

    @property
    def n(self) -> int:
        return self.rows_in * self.cols_in

    def _convolve(self, g: np.ndarray, transpose: bool) -> np.ndarray:
        if self.kernel_sep is not None:
            col, row = self.kernel_sep
            g = _conv1_circular(g, col, axis=0, transpose=transpose)
            return _conv1_circular(g, row, axis=1, transpose=transpose)
        return _conv2_circular(g, self.kernel, transpose=transpose)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = _check_len(x, self.n)
        if self.kind == "inpaint":
            return x[self.mask]
        out = self._convolve(x.reshape(self.rows_in, self.cols_in), transpose=False)
        if self.kind == "superres":
            out = out[:: self.factor, :: self.factor]
        return out.reshape(-1)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = _check_len(y, self.m)
        if self.kind == "inpaint":
            out = np.zeros(self.n)
            out[self.mask] = y
            return out
        if self.kind == "superres":
            up = np.zeros((self.rows_in, self.cols_in))
            up[:: self.factor, :: self.factor] = y.reshape(
                self.rows_in // self.factor, self.cols_in // self.factor
            )
            g = up
        else:
            g = y.reshape(self.rows_in, self.cols_in)
        return self._convolve(g, transpose=True).reshape(-1)

    def gram(self, x: np.ndarray) -> np.ndarray:
        """A^T A x, composed from apply and adjoint (never rediscretized)."""
        return self.adjoint(self.apply(x))


def _check_len(v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != n:
        raise ValueError(f"length mismatch: expected {n}, got {v.size}")
    return v


def _conv2_circular(grid: np.ndarray, kernel: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Circular convolution with the centered kernel; transpose flips all shifts."""
    kh, kw = kernel.shape
    out = np.zeros_like(grid)
    sign = -1 if transpose else 1
    for a in range(kh):
        for b in range(kw):
            w = kernel[a, b]
            if w == 0.0:
                continue
            dy = sign * (a - kh // 2)
            dx = sign * (b - kw // 2)
            out += w * np.roll(grid, (dy, dx), axis=(0, 1))
    return out


def _conv1_circular(grid: np.ndarray, taps: np.ndarray, axis: int, transpose: bool) -> np.ndarray:
    out = np.zeros_like(grid)
    half = len(taps) // 2
    sign = -1 if transpose else 1
    for a, w in enumerate(taps):
        if w == 0.0:
            continue
        out += w * np.roll(grid, sign * (a - half), axis=axis)
    return out


def _separate_kernel(kernel: np.ndarray) -> tuple | None:
    """Rank-1 factorization (col, row) with outer(col, row) == kernel to
    rounding error, or None when the kernel is not separable."""
    if kernel.shape[0] == 1 or kernel.shape[1] == 1:
        return None  # nothing to gain
    u, s, vt = np.linalg.svd(kernel)
    if s[1] > 1e-14 * s[0]:
        return None
    col = u[:, 0] * np.sqrt(s[0])
    row = vt[0] * np.sqrt(s[0])
    if col.sum() < 0:  # nonnegative kernels: fix the sign indeterminacy
        col, row = -col, -row
    if np.abs(np.outer(col, row) - kernel).max() > 1e-14:
        return None
    return col, row


def _validate_kernel(kernel: np.ndarray) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise ValueError("kernel must be 2-D")
    if kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError(f"kernel side lengths must be odd, got {kernel.shape}")
    if np.any(kernel < 0):
        raise ValueError("kernel taps must be nonnegative")
    total = kernel.sum()
    if total <= 0:
        raise ValueError("kernel must have at least one positive tap")
    return kernel / total


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Isotropic Gaussian taps on a size x size window, normalized to sum 1."""
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    ax = np.arange(size) - size // 2
    dy, dx = np.meshgrid(ax, ax, indexing="ij")
    taps = np.exp(-(dx**2 + dy**2) / (2.0 * sigma**2))
    return taps / taps.sum()


def make_inpaint(rows: int, cols: int, fraction: float, rng: Rng) -> ForwardOp:
    """Random pixel-sampling operator keeping round(fraction * n) pixels.

    The kept set is the first m entries of a Fisher-Yates shuffle of the
    pixel indices; measurement rows are ordered by increasing pixel index.
    """
    n = rows * cols
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    m = int(np.floor(fraction * n + 0.5))  # round half up
    if m < 1:
        raise ValueError("mask would be empty: at least one pixel must be sampled")
    perm = np.arange(n)
    rng.shuffle(perm)
    mask = np.zeros(n, dtype=bool)
    mask[perm[:m]] = True
    return ForwardOp(kind="inpaint", rows_in=rows, cols_in=cols, m=m, mask=mask)


def make_blur(rows: int, cols: int, kernel: np.ndarray) -> ForwardOp:
    """Circular 2-D convolution operator; taps are normalized to sum 1."""
    kernel = _validate_kernel(kernel)
    return ForwardOp(
        kind="blur", rows_in=rows, cols_in=cols, m=rows * cols, kernel=kernel,
        kernel_sep=_separate_kernel(kernel),
    )


def make_superres(rows: int, cols: int, kernel: np.ndarray, factor: int) -> ForwardOp:
    """Blur-then-decimate operator with sampling phase (0, 0)."""
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    if factor == 1:
        return make_blur(rows, cols, kernel)
    if rows % factor or cols % factor:
        raise ValueError(f"grid {rows}x{cols} not divisible by factor {factor}")
    kernel = _validate_kernel(kernel)
    m = (rows // factor) * (cols // factor)
    return ForwardOp(
        kind="superres", rows_in=rows, cols_in=cols, m=m, kernel=kernel, factor=factor,
        kernel_sep=_separate_kernel(kernel),
    )


def observe(op: ForwardOp, truth: Image, sigma: float, rng: Rng) -> np.ndarray:
    """Synthesize measurements: forward-apply the truth and add white Gaussian noise."""
    if (truth.rows, truth.cols) != (op.rows_in, op.cols_in):
        raise ValueError(
            f"image {truth.rows}x{truth.cols} does not match operator grid "
            f"{op.rows_in}x{op.cols_in}"
        )
    return op.apply(truth.data) + gaussian_noise(rng, op.m, sigma)


def lambda_max_gram(
    op: ForwardOp,
    tol: float = 1e-10,
    max_iter: int = 10000,
    diag: np.ndarray | None = None,
) -> PowerEstimate:
    """Largest eigenvalue of A^T A by power iteration from a fixed seeded start.

    With ``diag`` set to a positive vector d, estimates the top eigenvalue of
    the diagonally rescaled Gram map diag(d)^-1/2 A^T A diag(d)^-1/2 instead.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = op.n
    if diag is not None:
        diag = _check_len(diag, n)
        if np.any(diag <= 0):
            raise ValueError("diag entries must be positive")
        dis = 1.0 / np.sqrt(diag)
        mv = lambda v: dis * op.gram(dis * v)
    else:
        mv = op.gram
    v = gaussian_noise(Rng(_POWER_SEED), n, 1.0)
    v /= np.linalg.norm(v)
    est_prev = np.inf
    for it in range(1, max_iter + 1):
        w = mv(v)
        est = float(v @ w)
        if abs(est - est_prev) < tol * max(abs(est), np.finfo(float).tiny):
            return PowerEstimate(est, True, it)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return PowerEstimate(0.0, True, it)
        v = w / nw
        est_prev = est
    return PowerEstimate(est_prev, False, max_iter)


def export_mask(op: ForwardOp) -> Image:
    """Inpainting mask as an image: observed pixels 1.0 (byte 255), missing 0.0."""
    if op.kind != "inpaint":
        raise ValueError("mask export is defined for inpainting operators only")
    return Image(op.mask.astype(np.float64), op.rows_in, op.cols_in)


def inpaint_from_mask(mask_img: Image) -> ForwardOp:
    """Inpainting operator from a mask image (255 = observed, 0 = missing)."""
    mask = mask_img.data > 0.5
    m = int(mask.sum())
    if m < 1:
        raise ValueError("mask would be empty: at least one pixel must be sampled")
    return ForwardOp(
        kind="inpaint", rows_in=mask_img.rows, cols_in=mask_img.cols, m=m, mask=mask
    )


def save_mask_pgm(op: ForwardOp, path) -> None:
    save_pgm(export_mask(op), path)


def load_mask_pgm(path) -> ForwardOp:
    return inpaint_from_mask(load_pgm(path))


def load_kernel_taps(path) -> np.ndarray:
    """Read kernel taps from ASCII: first line "h w", then h*w taps row-major."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ValueError("kernel file must start with 'h w'")
    h, w = int(tokens[0]), int(tokens[1])
    taps = tokens[2:]
    if len(taps) != h * w:
        raise ValueError(f"expected {h * w} taps, got {len(taps)}")
    return np.array([float(t) for t in taps]).reshape(h, w)
