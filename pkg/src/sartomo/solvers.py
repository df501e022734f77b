"""Classical per-pixel sparse-recovery baselines: ISTA, OMP, and IHT.

All three solve y = R gamma + noise for a sparse complex gamma, one pixel at
a time.  ISTA runs proximal gradient descent on the complex LASSO objective

    F(gamma) = 0.5 ||y - R gamma||^2 + alpha ||gamma||_1

with the phase-preserving soft-threshold as the proximal step; OMP and IHT
are the standard greedy/thresholding iterations with deterministic
tie-breaking so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SteeringMatrix, _all_finite, as_measurement

__all__ = [
    "IstaConfig",
    "GreedyConfig",
    "SolveResult",
    "soft_threshold",
    "largest_gram_eigenvalue",
    "ista_solve",
    "omp_solve",
    "iht_solve",
]


@dataclass(frozen=True)
class IstaConfig:
    """ISTA hyperparameters.

    `lipschitz` must exceed the largest eigenvalue of R^H R; the solver
    verifies this with its own power-iteration estimate and refuses to run
    otherwise.  The effective threshold is alpha / lipschitz.
    """

    alpha: float
    lipschitz: float
    max_iters: int = 500
    tolerance: float = 1e-6

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.lipschitz > 0:
            raise ValueError("lipschitz must be positive")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be nonnegative")

    @property
    def threshold(self) -> float:
        return self.alpha / self.lipschitz


@dataclass(frozen=True)
class GreedyConfig:
    """Shared configuration for the greedy solvers (OMP, IHT).

    OMP additionally requires max_iters >= sparsity (it needs one round per
    selected atom) and sparsity <= min(N, L); IHT only needs sparsity <= L,
    since K = L (no truncation) is a legitimate overparameterized mode.
    Those bounds are checked at solve time where the matrix is known.
    """

    sparsity: int
    max_iters: int = 100
    residual_tolerance: float = 0.0

    def __post_init__(self):
        if int(self.sparsity) < 1:
            raise ValueError("sparsity must be >= 1")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if self.residual_tolerance < 0:
            raise ValueError("residual_tolerance must be nonnegative")


@dataclass
class SolveResult:
    estimate: np.ndarray
    iterations_used: int
    final_residual_norm: float
    objective_trace: list | None = None  # ISTA only


def soft_threshold(x, theta):
    """Complex soft-threshold h_theta(x) = sign(x) * max(|x| - theta, 0).

    The complex sign is x/|x| with sign(0) = 0, so phases pass through
    unchanged and magnitudes shrink by theta.  Works elementwise on arrays;
    returns a scalar for scalar input.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    arr = np.asarray(x, dtype=np.complex128)
    mag = np.abs(arr)
    scale = np.maximum(mag - theta, 0.0) / np.where(mag > 0.0, mag, 1.0)
    out = arr * scale
    if np.isscalar(x) or np.ndim(x) == 0:
        return complex(out)
    return out


def largest_gram_eigenvalue(R: SteeringMatrix, tol: float = 1e-10, max_iters: int = 1000) -> float:
    """Largest eigenvalue of R^H R by power iteration on the N x N Gram matrix.

    R R^H and R^H R share their nonzero spectrum, so iterating on the small
    channel-side Gram matrix is enough.  Deterministic start vector; stops
    when the Rayleigh quotient changes by less than `tol` (relative).
    """
    A = R.entries
    G = A @ A.conj().T
    n = G.shape[0]
    v = np.full(n, 1.0, dtype=np.complex128) + np.linspace(0.0, 1e-3, n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = G @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        lam_new = float(np.real(v.conj() @ w))
        v = w / norm_w
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1.0):
            return lam_new
        lam = lam_new
    return lam


def _ista_objective(y, A, alpha, gamma, residual):
    return float(0.5 * np.real(residual.conj() @ residual) + alpha * np.sum(np.abs(gamma)))


def ista_solve(y, R: SteeringMatrix, cfg: IstaConfig) -> SolveResult:
    """Iterative soft-thresholding from gamma_0 = 0.

    Update: gamma <- h_{alpha/L}(gamma + (1/L) R^H (y - R gamma)).  Stops on
    max_iters or when the relative iterate change drops below cfg.tolerance.
    The objective trace records F(gamma_k) for k = 0..iterations and is
    non-increasing whenever lipschitz > lambda_max(R^H R).
    """
    A = R.entries
    y = as_measurement(y, R.num_channels)
    lam = largest_gram_eigenvalue(R)
    if cfg.lipschitz <= lam:
        raise ValueError(
            f"lipschitz {cfg.lipschitz} must exceed lambda_max(R^H R) ~= {lam:.6g}"
        )
    theta = cfg.alpha / cfg.lipschitz
    gamma = np.zeros(R.num_positions, dtype=np.complex128)
    residual = y.copy()
    trace = [_ista_objective(y, A, cfg.alpha, gamma, residual)]
    iterations = 0
    for _ in range(int(cfg.max_iters)):
        step = gamma + (A.conj().T @ residual) / cfg.lipschitz
        new = soft_threshold(step, theta)
        if not _all_finite(new):
            raise RuntimeError("ISTA produced non-finite iterate")
        residual = y - A @ new
        trace.append(_ista_objective(y, A, cfg.alpha, new, residual))
        delta = float(np.linalg.norm(new - gamma))
        scale = max(float(np.linalg.norm(gamma)), 1e-30)
        gamma = new
        iterations += 1
        if delta <= cfg.tolerance * scale:
            break
    final_res = float(np.linalg.norm(y - A @ gamma))
    return SolveResult(gamma, iterations, final_res, trace)


def omp_solve(y, R: SteeringMatrix, cfg: GreedyConfig) -> SolveResult:
    """Orthogonal matching pursuit: greedy column picks + least-squares refits.

    Each of up to `sparsity` rounds adds the column with the largest
    normalized correlation against the current residual (lowest index wins
    ties), then refits all selected amplitudes by least squares.  Stops early
    once the residual norm is within cfg.residual_tolerance.
    """
    A = R.entries
    y = as_measurement(y, R.num_channels)
    n, l = A.shape
    k = int(cfg.sparsity)
    if k > min(n, l):
        raise ValueError(f"sparsity {k} exceeds min(N, L) = {min(n, l)}")
    if int(cfg.max_iters) < k:
        raise ValueError("OMP needs max_iters >= sparsity (one round per atom)")
    col_norms = np.linalg.norm(A, axis=0)
    if np.any(col_norms == 0.0):
        raise ValueError("steering matrix has a zero column")

    support: list[int] = []
    gamma = np.zeros(l, dtype=np.complex128)
    residual = y.copy()
    rounds = min(k, int(cfg.max_iters))
    for _ in range(rounds):
        if np.linalg.norm(residual) <= cfg.residual_tolerance:
            break
        corr = np.abs(A.conj().T @ residual) / col_norms
        corr[support] = -1.0
        pick = int(np.argmax(corr))  # argmax takes the lowest index on ties
        support.append(pick)
        sub = A[:, support]
        sol, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
        if rank < len(support):
            raise RuntimeError(
                "rank-deficient active set in OMP refit (duplicate grid columns?)"
            )
        gamma = np.zeros(l, dtype=np.complex128)
        gamma[support] = sol
        residual = y - sub @ sol
    final_res = float(np.linalg.norm(y - A @ gamma))
    return SolveResult(gamma, len(support), final_res)


def _hard_threshold(v: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest-modulus entries (ties -> lowest index), zero the rest."""
    if k >= v.size:
        return v.copy()
    order = np.argsort(-np.abs(v), kind="stable")
    out = np.zeros_like(v)
    keep = order[:k]
    out[keep] = v[keep]
    return out


def iht_solve(y, R: SteeringMatrix, cfg: GreedyConfig) -> SolveResult:
    """Iterative hard thresholding: gamma <- H_K(gamma + (1/L) R^H (y - R gamma)).

    H_K keeps the K largest-modulus entries.  The gradient step size 1/L uses
    L = 1.01 * lambda_max(R^H R) from the shared power-iteration estimate
    (the config carries no step size of its own).  K may be as large as L
    (no truncation), which reduces the iteration to plain gradient descent on
    the least-squares objective.
    """
    A = R.entries
    y = as_measurement(y, R.num_channels)
    l = R.num_positions
    k = int(cfg.sparsity)
    if k > l:
        raise ValueError(f"sparsity {k} exceeds the grid size L = {l}")
    lam = largest_gram_eigenvalue(R)
    if lam == 0.0:
        raise ValueError("steering matrix is zero")
    step_l = 1.01 * lam

    gamma = np.zeros(l, dtype=np.complex128)
    iterations = 0
    for _ in range(int(cfg.max_iters)):
        residual = y - A @ gamma
        if np.linalg.norm(residual) <= cfg.residual_tolerance:
            break
        v = gamma + (A.conj().T @ residual) / step_l
        if not _all_finite(v):
            raise RuntimeError("IHT produced non-finite iterate")
        gamma = _hard_threshold(v, k)
        iterations += 1
    final_res = float(np.linalg.norm(y - A @ gamma))
    return SolveResult(gamma, iterations, final_res)
