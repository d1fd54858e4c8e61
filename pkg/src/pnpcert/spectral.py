"""Iteration operators of the three schemes and their spectral certification.

Each solver's frozen-momentum update is an affine map x -> P x + q. Whenever
the spectral radius of P is below 1, the full momentum iteration converges
globally and linearly, with asymptotic rate sqrt(rho(P)): the limiting
two-step update has companion form [[2P, -P], [I, 0]], whose eigenvalues
lie on |lambda| = sqrt(mu) for each eigenvalue mu of P.

This module builds P for the three schemes, estimates rho(P) by power
iteration, derives the accelerated rate, verifies the convergence
preconditions on the denoiser/operator pair, and provides dense small-n
reference paths used for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fwdops import ForwardOp, PowerEstimate, lambda_max_gram
from .imgcore import Rng, gaussian_noise
from .kernel_denoise import DENSE_CAP, KernelDenoiser, symmetric_weights
from .solvers import solve_shifted_gram


@dataclass
class IterationOperator:
    """Matrix-free one-step update map of a solver with momentum frozen.

    kinds:
      pnp        -- P x = W (x - gamma A^T A x)
      red        -- P x = (I + mu A^T A)^-1 (theta W + (1 - theta) I) x
      scaled_pnp -- P x = W (x - gamma D^-1 A^T A x)

    ``spectral_apply`` exposes a map with the same spectrum that is a product
    of two symmetric PSD contractions, so power-iteration Rayleigh quotients
    stay below 1; for the scaled kind this is the degree-symmetrized form.
    """

    kind: str
    op: ForwardOp
    denoiser: KernelDenoiser
    gamma: float | None = None
    mu: float | None = None
    theta: float | None = None
    cg_tol: float = 1e-10
    cg_max_iter: int = 500
    _dinv: np.ndarray | None = field(default=None, repr=False)
    _dsqrt_inv: np.ndarray | None = field(default=None, repr=False)
    _w_sym: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.op.n

    def apply(self, x: np.ndarray, cg_start: np.ndarray | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size != self.n:
            raise ValueError(f"length mismatch: expected {self.n}, got {x.size}")
        W = self.denoiser.weights
        if self.kind == "pnp":
            return W @ (x - self.gamma * self.op.gram(x))
        if self.kind == "scaled_pnp":
            return W @ (x - self.gamma * (self._dinv * self.op.gram(x)))
        blended = self.theta * (W @ x) + (1.0 - self.theta) * x
        return solve_shifted_gram(
            self.op, self.mu, blended, x0=cg_start, tol=self.cg_tol, max_iter=self.cg_max_iter
        )

    def spectral_apply(self, x: np.ndarray, cg_start: np.ndarray | None = None) -> np.ndarray:
        if self.kind != "scaled_pnp":
            return self.apply(x, cg_start)
        s = self._dsqrt_inv
        return self._w_sym @ (x - self.gamma * (s * self.op.gram(s * x)))

    def offset(self, b: np.ndarray) -> np.ndarray:
        """Constant term q of the affine update x -> P x + q for measurements b."""
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        if b.size != self.op.m:
            raise ValueError(f"measurement length {b.size} != {self.op.m}")
        atb = self.op.adjoint(b)
        W = self.denoiser.weights
        if self.kind == "pnp":
            return self.gamma * (W @ atb)
        if self.kind == "scaled_pnp":
            return self.gamma * (W @ (self._dinv * atb))
        return solve_shifted_gram(
            self.op, self.mu, self.mu * atb, tol=self.cg_tol, max_iter=self.cg_max_iter
        )


def _check_pair(op: ForwardOp, denoiser: KernelDenoiser) -> None:
    if denoiser.n != op.n:
        raise ValueError(f"denoiser size {denoiser.n} != operator size {op.n}")


def pnp_operator(op: ForwardOp, denoiser: KernelDenoiser, gamma: float) -> IterationOperator:
    """The map may be built for any gamma >= 0 (gamma = 0 degenerates to W);
    certification simply fails outside the contractive interval."""
    _check_pair(op, denoiser)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return IterationOperator(kind="pnp", op=op, denoiser=denoiser, gamma=gamma)


def red_operator(
    op: ForwardOp,
    denoiser: KernelDenoiser,
    mu: float,
    theta: float,
    cg_tol: float = 1e-10,
    cg_max_iter: int = 500,
) -> IterationOperator:
    _check_pair(op, denoiser)
    if mu <= 0:
        raise ValueError("mu must be positive")
    if not 0 <= theta <= 1:
        raise ValueError("theta must be in [0, 1]")
    return IterationOperator(
        kind="red", op=op, denoiser=denoiser, mu=mu, theta=theta,
        cg_tol=cg_tol, cg_max_iter=cg_max_iter,
    )


def scaled_operator(op: ForwardOp, denoiser: KernelDenoiser, gamma: float) -> IterationOperator:
    _check_pair(op, denoiser)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if denoiser.mode != "nlm":
        raise ValueError("scaled iteration requires an nlm-mode denoiser")
    it = IterationOperator(kind="scaled_pnp", op=op, denoiser=denoiser, gamma=gamma)
    it._dinv = 1.0 / denoiser.degrees
    it._dsqrt_inv = 1.0 / np.sqrt(denoiser.degrees)
    it._w_sym = symmetric_weights(denoiser)
    return it


def spectral_radius(
    iter_op: IterationOperator,
    tol: float = 1e-10,
    max_iter: int = 100000,
    rng: Rng | None = None,
) -> PowerEstimate:
    """Power iteration with Rayleigh-quotient estimates of rho(P).

    The update maps here are similar to symmetric PSD matrices, so the
    spectrum is real and nonnegative and plain power iteration settles on
    the dominant eigenvalue. Stops when successive estimates differ by
    less than tol * estimate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = rng if rng is not None else Rng(0x51B7)
    v = gaussian_noise(rng, iter_op.n, 1.0)
    v /= np.linalg.norm(v)
    est_prev = np.inf
    w = None
    for it in range(1, max_iter + 1):
        w = iter_op.spectral_apply(v, cg_start=w)
        est = float(v @ w)
        if abs(est - est_prev) < tol * max(abs(est), np.finfo(float).tiny):
            return PowerEstimate(est, True, it)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return PowerEstimate(0.0, True, it)
        v = w / nw
        est_prev = est
    return PowerEstimate(est_prev, False, max_iter)


def accelerated_radius(step_radius: float) -> float:
    """Spectral radius of the limiting momentum companion map given rho(P).

    Every eigenvalue mu of P spawns the conjugate pair mu +/- i sqrt(mu - mu^2)
    of the companion form, each of modulus sqrt(mu), so the companion radius
    is sqrt(rho(P)). Certification requires rho(P) < 1; callers should treat
    values >= 1 as non-certifying.
    """
    if step_radius < 0:
        raise ValueError("spectral radius estimate must be nonnegative")
    return float(np.sqrt(step_radius))


def momentum_companion(p_dense: np.ndarray) -> np.ndarray:
    """Dense 2n x 2n companion matrix [[2P, -P], [I, 0]] of the limit update."""
    n = p_dense.shape[0]
    top = np.hstack([2.0 * p_dense, -p_dense])
    bottom = np.hstack([np.eye(n), np.zeros((n, n))])
    return np.vstack([top, bottom])


def fixed_point(
    iter_op: IterationOperator,
    q: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Solve (I - P) x = q by Richardson iteration x <- P x + q.

    Converges when rho(P) < 1; run the certifier first. Stops when the
    update step satisfies ||x - (P x + q)|| <= tol * ||q||.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    qn = np.linalg.norm(q)
    if qn == 0.0:
        return np.zeros(iter_op.n)
    x = q.copy()
    w = None
    for _ in range(max_iter):
        w = iter_op.apply(x, cg_start=w)
        x_new = w + q
        if np.linalg.norm(x_new - x) <= tol * qn:
            return x_new
        x = x_new
    raise RuntimeError(f"fixed-point iteration did not reach tol={tol} in {max_iter} steps")


def materialize(apply_fn, n: int, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense matrix of a linear map, assembled column-by-column from basis vectors."""
    if n > cap:
        raise ValueError(f"dense materialization capped at n <= {cap}")
    cols = np.empty((n, n))
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        cols[:, i] = apply_fn(e)
        e[i] = 0.0
    return cols


def dense_oracle(apply_fn, n: int, cap: int = DENSE_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Materialize a map and return (matrix, eigenvalues).

    Uses a symmetric eigensolver when the materialized matrix is symmetric to
    rounding error, otherwise a general one (complex eigenvalues admitted).
    """
    mat = materialize(apply_fn, n, cap)
    scale = np.abs(mat).max()
    if np.abs(mat - mat.T).max() <= 1e-12 * (1.0 + scale):
        return mat, np.linalg.eigvalsh(mat)
    return mat, np.linalg.eigvals(mat)


@dataclass
class AssumptionChecks:
    """Verdicts for the convergence preconditions of a denoiser/operator pair."""

    stochastic_ok: bool
    stochastic_defect: float
    forward_ok: bool          # A 1 != 0
    forward_one_norm: float
    spectrum_checked: bool    # dense spectrum test ran (small n only)
    spectrum_ok: bool
    spectrum_low: float
    spectrum_high: float
    fix_ok: bool              # eigenvalue 1 is simple: fixed vectors are the constants
    second_eigenvalue: float
    heuristic: bool           # large-n nlm deflation is approximate

    def all_ok(self) -> bool:
        return self.stochastic_ok and self.forward_ok and self.fix_ok and (
            self.spectrum_ok or not self.spectrum_checked
        )


def check_assumption(
    denoiser: KernelDenoiser, op, n_small_cap: int = DENSE_CAP
) -> AssumptionChecks:
    """Verify stochasticity of W, A 1 != 0, the spectrum of W, and simplicity
    of the eigenvalue 1.

    At n <= n_small_cap the spectrum checks use a dense symmetric eigensolver
    (on the degree-symmetrized similar form for nlm weights). Above the cap,
    the second eigenvalue is estimated by power iteration on the complement
    of the constants (mean removal); for nlm weights this deflation is only
    approximate and the result is flagged heuristic.
    """
    n = denoiser.n
    ones = np.ones(n)
    defect = float(np.abs(denoiser.weights @ ones - ones).max())
    stochastic_ok = defect <= 1e-10
    a_one = float(np.linalg.norm(op.apply(ones)))
    forward_ok = a_one > 1e-10 * np.sqrt(n)

    if n <= n_small_cap:
        if denoiser.mode == "dsg":
            dense = denoiser.weights.toarray()
        else:
            dense = symmetric_weights(denoiser).toarray()
        eig = np.sort(np.linalg.eigvalsh(dense))
        low, high = float(eig[0]), float(eig[-1])
        second = float(eig[-2]) if n >= 2 else float("-inf")
        return AssumptionChecks(
            stochastic_ok=stochastic_ok,
            stochastic_defect=defect,
            forward_ok=forward_ok,
            forward_one_norm=a_one,
            spectrum_checked=True,
            spectrum_ok=(low >= -1e-8 and high <= 1.0 + 1e-8),
            spectrum_low=low,
            spectrum_high=high,
            fix_ok=second <= 1.0 - 1e-10,
            second_eigenvalue=second,
            heuristic=False,
        )

    rng = Rng(0xDEF1A7E)
    v = gaussian_noise(rng, n, 1.0)
    v -= v.mean()
    v /= np.linalg.norm(v)
    est_prev, est = np.inf, 0.0
    for _ in range(5000):
        w = denoiser.weights @ v
        w -= w.mean()
        est = float(v @ w)
        if abs(est - est_prev) < 1e-10 * max(abs(est), 1e-300):
            break
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        est_prev = est
    return AssumptionChecks(
        stochastic_ok=stochastic_ok,
        stochastic_defect=defect,
        forward_ok=forward_ok,
        forward_one_norm=a_one,
        spectrum_checked=False,
        spectrum_ok=True,
        spectrum_low=float("nan"),
        spectrum_high=float("nan"),
        fix_ok=est <= 1.0 - 1e-10,
        second_eigenvalue=est,
        heuristic=denoiser.mode == "nlm",
    )


SWEEP_CSV_HEADER = "task,denoiser_mode,gamma_or_invL,rho_P,rho_R,certified"


@dataclass
class SpectralReport:
    """Per-instance certification summary."""

    task: str
    denoiser_mode: str
    grid_value: float          # step-size fraction (pnp paths) or 1/L (red)
    rho_step: PowerEstimate    # rho(P)
    rho_accel: float           # sqrt(rho(P)), the certified asymptotic rate
    certified: bool            # rho_accel < 1
    assumptions: AssumptionChecks
    gamma_interval: tuple[float, float]
    eigenvalues: np.ndarray | None = None
    power_tol: float = 1e-10

    def csv_row(self) -> str:
        return (
            f"{self.task},{self.denoiser_mode},{self.grid_value!r},"
            f"{self.rho_step.value!r},{self.rho_accel!r},{str(self.certified).lower()}"
        )

    def to_kv(self) -> str:
        a = self.assumptions
        lines = [
            f"task={self.task}",
            f"denoiser_mode={self.denoiser_mode}",
            f"gamma_or_invL={self.grid_value!r}",
            f"rho_P={self.rho_step.value!r}",
            f"rho_P_converged={str(self.rho_step.converged).lower()}",
            f"rho_P_iterations={self.rho_step.iterations}",
            f"rho_R={self.rho_accel!r}",
            f"certified={str(self.certified).lower()}",
            f"gamma_interval_low={self.gamma_interval[0]!r}",
            f"gamma_interval_high={self.gamma_interval[1]!r}",
            f"power_tol={self.power_tol!r}",
            f"check_stochastic={str(a.stochastic_ok).lower()}",
            f"check_stochastic_defect={a.stochastic_defect!r}",
            "check_stochastic_tol=1e-10",
            f"check_forward_one={str(a.forward_ok).lower()}",
            f"check_forward_one_norm={a.forward_one_norm!r}",
            f"check_spectrum_ran={str(a.spectrum_checked).lower()}",
            f"check_spectrum={str(a.spectrum_ok).lower()}",
            f"check_spectrum_low={a.spectrum_low!r}",
            f"check_spectrum_high={a.spectrum_high!r}",
            "check_spectrum_tol=1e-08",
            f"check_fix_simple={str(a.fix_ok).lower()}",
            f"second_eigenvalue={a.second_eigenvalue!r}",
            "check_fix_gap_tol=1e-10",
            f"check_heuristic={str(a.heuristic).lower()}",
        ]
        if self.eigenvalues is not None:
            vals = ",".join(repr(float(v)) for v in self.eigenvalues)
            lines.append(f"eigenvalues={vals}")
        return "\n".join(lines) + "\n"


def build_report(
    task: str,
    iter_op: IterationOperator,
    grid_value: float,
    lambda_hat: float,
    power_tol: float = 1e-8,
    power_max_iter: int = 20000,
    rng: Rng | None = None,
    dense_eigenvalues: bool = False,
) -> SpectralReport:
    """Assemble a certification report for one iteration operator."""
    est = spectral_radius(iter_op, tol=power_tol, max_iter=power_max_iter, rng=rng)
    rho_r = accelerated_radius(max(est.value, 0.0))
    checks = check_assumption(iter_op.denoiser, iter_op.op)
    eigs = None
    if dense_eigenvalues and iter_op.n <= DENSE_CAP:
        _, eig = dense_oracle(iter_op.spectral_apply, iter_op.n)
        eigs = np.sort(np.real(eig))
    return SpectralReport(
        task=task,
        denoiser_mode=iter_op.denoiser.mode,
        grid_value=grid_value,
        rho_step=est,
        rho_accel=rho_r,
        certified=rho_r < 1.0,
        assumptions=checks,
        gamma_interval=(0.0, 1.0 / lambda_hat),
        eigenvalues=eigs,
        power_tol=power_tol,
    )
