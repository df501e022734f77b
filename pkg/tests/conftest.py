"""Shared test utilities: oracle-side constructions independent of the library."""

import functools
import itertools

import numpy as np


@functools.lru_cache(maxsize=None)
def low_coherence_frame(n: int, l: int, seed: int, iters: int = 800, target: float = 0.25):
    """Unit-norm complex frame with small mutual coherence.

    Alternating projection between the set of Gram matrices with clipped
    off-diagonal magnitude and the set of rank-n Gram matrices.  Deterministic
    given the seed; typically lands within a percent of the Welch bound.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, l)) + 1j * rng.standard_normal((n, l))
    A /= np.linalg.norm(A, axis=0)
    for _ in range(iters):
        G = A.conj().T @ A
        mag = np.abs(G)
        off = ~np.eye(l, dtype=bool)
        scale = np.where(off & (mag > target), target / np.maximum(mag, 1e-30), 1.0)
        G = G * scale
        np.fill_diagonal(G, 1.0)
        w, V = np.linalg.eigh(G)
        w = np.maximum(w[-n:], 0.0)
        A = (V[:, -n:] * np.sqrt(w)).conj().T
        A /= np.maximum(np.linalg.norm(A, axis=0), 1e-30)
    A = np.ascontiguousarray(A)
    A.flags.writeable = False
    return A


def mutual_coherence(A: np.ndarray) -> float:
    G = np.abs(A.conj().T @ A) / np.outer(
        np.linalg.norm(A, axis=0), np.linalg.norm(A, axis=0)
    )
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def projected_gradient_weights(A, max_iters=100_000, tol=1e-14):
    """Independent oracle: projected gradient descent on ||W^H R||_F^2 with
    each column constrained to w^H r_i = 1."""
    G = A @ A.conj().T
    lam = float(np.linalg.eigvalsh(0.5 * (G + G.conj().T))[-1])
    step = 0.9 / (2.0 * lam)
    col_norm2 = np.real(np.sum(np.conj(A) * A, axis=0))
    W = A / col_norm2  # feasible start
    for _ in range(max_iters):
        grad = 2.0 * (G @ W)
        U = W - step * grad
        r_dot_u = np.sum(np.conj(A) * U, axis=0)
        W_next = U + A * ((1.0 - r_dot_u) / col_norm2)
        if np.max(np.abs(W_next - W)) < tol:
            return W_next
        W = W_next
    return W


def exhaustive_best_support(A: np.ndarray, y: np.ndarray, k: int):
    """Least-squares search over every size-k support.

    Returns (best support set, its residual norm, runner-up residual norm).
    """
    best, best_res, second = None, np.inf, np.inf
    for combo in itertools.combinations(range(A.shape[1]), k):
        sub = A[:, combo]
        sol, _, _, _ = np.linalg.lstsq(sub, y, rcond=None)
        r = float(np.linalg.norm(y - sub @ sol))
        if r < best_res:
            second = best_res
            best, best_res = set(combo), r
        elif r < second:
            second = r
    return best, best_res, second
