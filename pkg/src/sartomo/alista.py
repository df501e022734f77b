"""Unrolled thresholding network with an analytically precomputed weight matrix.

The sensing operator R is fixed by the acquisition, so the network's weight
matrix W does not have to be learned: each column solves a small
equality-constrained quadratic (minimize the summed correlation with all
steering columns subject to unit correlation with its own) and has a closed
form through the channel Gram matrix.  Only two scalars per layer remain to
be trained — a threshold theta_k and a step size eta_k — which keeps training
cheap, deterministic, and exactly differentiable by hand.

Layer update, from gamma_0 = 0:

    gamma_{k+1} = h_{theta_k}( gamma_k + eta_k * W^H (y - R gamma_k) )

with h the complex soft threshold.  Gradients of the mean squared
reconstruction error with respect to {theta_k, eta_k} are accumulated in
reverse through the unrolled layers; a central finite-difference mode exists
as a cross-check oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import SteeringMatrix, _all_finite, as_measurement
from .solvers import largest_gram_eigenvalue, soft_threshold

__all__ = [
    "AnalyticWeights",
    "AlistaModel",
    "GradientMode",
    "TrainConfig",
    "compute_analytic_weights",
    "alista_forward",
    "batch_loss",
    "alista_gradient",
    "train",
    "sweep_layers",
]

_MAX_SEED = 2**64


class GradientMode(str, Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite_difference"


@dataclass(frozen=True, eq=False)
class AnalyticWeights:
    """Precomputed N x L weight matrix tied to the steering matrix behind it.

    `objective_value` records ||W^H R||_F^2 at the solution; `steering_hash`
    must match the hash of the steering matrix the weights were derived from
    before they may be used together.
    """

    entries: np.ndarray
    steering_hash: str
    objective_value: float

    def __post_init__(self):
        m = np.array(self.entries, dtype=np.complex128, copy=True, order="C")
        if m.ndim != 2:
            raise ValueError("weight matrix must be 2-D")
        if not _all_finite(m):
            raise ValueError("weight matrix entries must be finite")
        if not (math.isfinite(self.objective_value) and self.objective_value >= 0):
            raise ValueError("objective_value must be finite and nonnegative")
        m.flags.writeable = False
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "objective_value", float(self.objective_value))

    def constraint_residual(self, R: SteeringMatrix) -> float:
        """max_i |w_i^H r_i - 1|: how far the unit-diagonal constraint drifts."""
        diag = np.sum(np.conj(self.entries) * R.entries, axis=0)
        return float(np.max(np.abs(diag - 1.0)))


@dataclass(frozen=True, eq=False)
class AlistaModel:
    """K unrolled layers: analytic weights plus per-layer (theta_k, eta_k)."""

    weights: AnalyticWeights
    layers: int
    theta: np.ndarray
    eta: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        k = int(self.layers)
        if k < 1:
            raise ValueError("layers must be >= 1")
        th = np.array(self.theta, dtype=float)
        et = np.array(self.eta, dtype=float)
        if th.shape != (k,) or et.shape != (k,):
            raise ValueError("theta and eta must both have one entry per layer")
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(et))):
            raise ValueError("theta and eta must be finite")
        if np.any(th < 0):
            raise ValueError("thresholds theta_k must be nonnegative")
        th.flags.writeable = False
        et.flags.writeable = False
        object.__setattr__(self, "layers", k)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "eta", et)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for mini-batch gradient descent on {theta_k, eta_k}.

    `validation_fraction` only applies when the dataset does not already
    carry a usable validation split.  `layer_schedule`, when given, lists
    non-decreasing unroll depths for progressive growth; training epochs are
    divided evenly over the schedule entries and the last entry must equal
    the full depth.  `tied` shares a single (theta, eta) across layers.
    `loss_mode` is "complex" (squared distance of complex vectors) or
    "magnitude" (squared distance of moduli).
    """

    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    gradient_mode: GradientMode = GradientMode.ANALYTIC
    validation_fraction: float = 0.1
    layer_schedule: tuple | None = None
    tied: bool = False
    loss_mode: str = "complex"
    momentum: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= int(self.seed) < _MAX_SEED:
            raise ValueError("seed must be a 64-bit unsigned integer")
        GradientMode(self.gradient_mode)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.layer_schedule is not None:
            sched = tuple(int(k) for k in self.layer_schedule)
            if not sched:
                raise ValueError("layer_schedule must be nonempty when given")
            if any(b < a for a, b in zip(sched, sched[1:])) or sched[0] < 1:
                raise ValueError("layer_schedule must be non-decreasing positive depths")
            object.__setattr__(self, "layer_schedule", sched)
        if self.loss_mode not in ("complex", "magnitude"):
            raise ValueError("loss_mode must be 'complex' or 'magnitude'")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


# ---------------------------------------------------------------------------
# analytic weights


def compute_analytic_weights(R: SteeringMatrix, *, max_condition: float = 1e12) -> AnalyticWeights:
    """Closed-form per-column weight solve through the channel Gram matrix.

    Column i minimizes ||R^H w||^2 subject to w^H r_i = 1, giving
    w_i = (R R^H)^{-1} r_i / (r_i^H (R R^H)^{-1} r_i).  Requires R to have
    full row rank; a channel Gram condition number beyond `max_condition`
    is rejected.
    """
    A = R.entries
    G = A @ A.conj().T
    G = 0.5 * (G + G.conj().T)
    evals = np.linalg.eigvalsh(G)
    if evals[0] <= 0.0 or evals[-1] / evals[0] > max_condition:
        cond = math.inf if evals[0] <= 0.0 else evals[-1] / evals[0]
        raise RuntimeError(
            f"channel Gram matrix is ill-conditioned (condition {cond:.3e} "
            f"exceeds {max_condition:.1e}); the weight solve needs full row rank"
        )
    X = np.linalg.solve(G, A)
    denom = np.real(np.sum(np.conj(A) * X, axis=0))
    W = X / denom
    objective = float(np.sum(np.abs(W.conj().T @ A) ** 2))
    return AnalyticWeights(W, R.geometry_hash, objective)


# ---------------------------------------------------------------------------
# forward / loss / gradient internals (batched over rows of Y)


def _check_pairing(model: AlistaModel, R: SteeringMatrix):
    if model.weights.steering_hash != R.geometry_hash:
        raise ValueError(
            "weight/steering pairing broken: the model's weights were derived "
            "from a different steering matrix (hash mismatch)"
        )
    if model.weights.entries.shape != R.entries.shape:
        raise ValueError("weight matrix dimensions do not match the steering matrix")


def _unroll(theta, eta, W, A, Y, keep_trace: bool):
    """Run the unrolled layers on a batch.

    Returns (output, pre_activations, feedbacks, states); the last three are
    None unless keep_trace.  Raises on non-finite intermediates.
    """
    gamma = np.zeros((Y.shape[0], A.shape[1]), dtype=np.complex128)
    pre_acts = [] if keep_trace else None
    feedbacks = [] if keep_trace else None
    states = [gamma] if keep_trace else None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(len(theta)):
            resid = Y - gamma @ A.T
            b = resid @ np.conj(W)
            v = gamma + eta[k] * b
            if not _all_finite(v):
                raise RuntimeError(
                    f"non-finite intermediate at layer {k}: eta is likely divergent"
                )
            gamma = soft_threshold(v, theta[k])
            if keep_trace:
                pre_acts.append(v)
                feedbacks.append(b)
                states.append(gamma)
    return gamma, pre_acts, feedbacks, states


def _loss_value(output, Gamma, loss_mode: str) -> float:
    if loss_mode == "magnitude":
        diff = np.abs(output) - np.abs(Gamma)
        return float(np.sum(diff**2)) / output.shape[0]
    diff = output - Gamma
    return float(np.sum(diff.real**2 + diff.imag**2)) / output.shape[0]


def _top_gradient(output, Gamma, loss_mode: str):
    B = output.shape[0]
    if loss_mode == "magnitude":
        mag = np.abs(output)
        safe = np.where(mag > 0, mag, 1.0)
        unit = np.where(mag > 0, output / safe, 0.0)
        return (2.0 / B) * (mag - np.abs(Gamma)) * unit
    return (2.0 / B) * (output - Gamma)


def _analytic_gradient(theta, eta, W, A, Y, Gamma, loss_mode: str):
    output, pre_acts, feedbacks, _ = _unroll(theta, eta, W, A, Y, keep_trace=True)
    K = len(theta)
    d_theta = np.zeros(K)
    d_eta = np.zeros(K)
    with np.errstate(over="ignore", invalid="ignore"):
        g = _top_gradient(output, Gamma, loss_mode)
        for k in reversed(range(K)):
            v = pre_acts[k]
            rho = np.abs(v)
            active = rho > theta[k]
            safe = np.where(active, rho, 1.0)
            re_vg = np.real(np.conj(v) * g)
            g_v = np.where(
                active,
                (1.0 - theta[k] / safe) * g + (theta[k] / safe**3) * re_vg * v,
                0.0,
            )
            d_theta[k] = -float(np.sum(np.where(active, re_vg / safe, 0.0)))
            d_eta[k] = float(np.sum(np.real(np.conj(g_v) * feedbacks[k])))
            g = g_v - eta[k] * ((g_v @ W.T) @ np.conj(A))
    return d_theta, d_eta


def _fd_gradient(theta, eta, W, A, Y, Gamma, loss_mode: str, rel_step: float):
    def loss_at(th, et):
        out, _, _, _ = _unroll(th, et, W, A, Y, keep_trace=False)
        return _loss_value(out, Gamma, loss_mode)

    K = len(theta)
    grads = []
    for params in (theta, eta):
        g = np.zeros(K)
        for k in range(K):
            h = rel_step * max(abs(float(params[k])), 1e-2)
            hi = params.copy()
            lo = params.copy()
            hi[k] += h
            lo[k] -= h
            if params is theta:
                if lo[k] < 0.0:
                    # thresholds live on [0, inf); fall back to a one-sided
                    # difference instead of probing a negative threshold
                    g[k] = (loss_at(hi, eta) - loss_at(theta, eta)) / h
                else:
                    g[k] = (loss_at(hi, eta) - loss_at(lo, eta)) / (2.0 * h)
            else:
                g[k] = (loss_at(theta, hi) - loss_at(theta, lo)) / (2.0 * h)
        grads.append(g)
    return grads[0], grads[1]


def _stack_batch(batch, n_channels: int, n_positions: int):
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    Y = np.array([np.asarray(y, dtype=np.complex128) for y, _ in batch])
    G = np.array([np.asarray(g, dtype=np.complex128) for _, g in batch])
    if Y.shape != (len(batch), n_channels) or G.shape != (len(batch), n_positions):
        raise ValueError("batch rows do not match the steering matrix dimensions")
    return Y, G


# ---------------------------------------------------------------------------
# public operations


def alista_forward(model: AlistaModel, y, R: SteeringMatrix):
    """Run the K unrolled layers on one measurement; returns the estimate."""
    _check_pairing(model, R)
    yv = as_measurement(y, R.num_channels)
    out, _, _, _ = _unroll(
        model.theta, model.eta, model.weights.entries, R.entries,
        yv[np.newaxis, :], keep_trace=False,
    )
    return out[0]


def batch_loss(model: AlistaModel, batch, R: SteeringMatrix, loss_mode: str = "complex") -> float:
    """Batch-mean squared reconstruction error of the unrolled network."""
    _check_pairing(model, R)
    Y, G = _stack_batch(batch, R.num_channels, R.num_positions)
    out, _, _, _ = _unroll(
        model.theta, model.eta, model.weights.entries, R.entries, Y, keep_trace=False
    )
    return _loss_value(out, G, loss_mode)


def alista_gradient(
    model: AlistaModel,
    batch,
    R: SteeringMatrix,
    *,
    mode: GradientMode = GradientMode.ANALYTIC,
    loss_mode: str = "complex",
    fd_step: float = 1e-5,
):
    """Gradient of the batch-mean loss with respect to (theta, eta).

    Analytic mode accumulates exact reverse-mode derivatives through the
    unrolled layers, using subgradient 0 exactly at soft-threshold kinks.
    Finite-difference mode recomputes the loss under central perturbations
    (step `fd_step` relative) and serves as a slow cross-check.
    """
    _check_pairing(model, R)
    Y, G = _stack_batch(batch, R.num_channels, R.num_positions)
    W = model.weights.entries
    A = R.entries
    th = np.array(model.theta, dtype=float)
    et = np.array(model.eta, dtype=float)
    if GradientMode(mode) is GradientMode.ANALYTIC:
        d_theta, d_eta = _analytic_gradient(th, et, W, A, Y, G, loss_mode)
    else:
        d_theta, d_eta = _fd_gradient(th, et, W, A, Y, G, loss_mode, fd_step)
    if not (np.all(np.isfinite(d_theta)) and np.all(np.isfinite(d_eta))):
        raise RuntimeError("non-finite gradient: step sizes eta are divergent")
    return d_theta, d_eta


def _resolve_split(dataset, cfg: TrainConfig):
    """Pick training/validation rows, honoring the dataset's own split tags."""
    if "train" in dataset.splits and len(dataset.splits["train"]) > 0:
        train_rows = dataset.subset("train")
        val_rows = dataset.subset("validation") if "validation" in dataset.splits else []
    else:
        train_rows = list(dataset.samples)
        val_rows = []
    if not val_rows:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
        order = rng.permutation(len(train_rows))
        n_val = max(1, int(round(cfg.validation_fraction * len(train_rows))))
        if n_val >= len(train_rows):
            raise ValueError("dataset too small to carve out a validation split")
        val_rows = [train_rows[i] for i in order[:n_val]]
        train_rows = [train_rows[i] for i in order[n_val:]]
    return train_rows, val_rows


def _epoch_depths(layers: int, cfg: TrainConfig):
    if cfg.layer_schedule is None:
        return [layers] * cfg.epochs
    sched = cfg.layer_schedule
    if sched[-1] != layers or sched[0] < 1 or sched[-1] > layers:
        raise ValueError("layer_schedule must end at the full layer count")
    if len(sched) > cfg.epochs:
        raise ValueError("layer_schedule cannot have more phases than epochs")
    per_phase = cfg.epochs // len(sched)
    depths = []
    for k in sched:
        depths.extend([k] * per_phase)
    depths.extend([sched[-1]] * (cfg.epochs - len(depths)))
    return depths


def train(dataset, R: SteeringMatrix, layers: int, cfg: TrainConfig) -> AlistaModel:
    """Fit per-layer (theta_k, eta_k) by seeded mini-batch gradient descent.

    Initialization: eta_k = 1/lambda_max(R^H R) (the classical
    gradient-descent step) and theta_k = 0.1 * eta_0 * median|W^H y| over the
    training measurements.  Thresholds are clamped at 0 after every update.
    Records per-epoch train/validation loss and parameter trajectories in the
    model metadata and returns the parameters from the epoch with the lowest
    validation loss (among epochs run at full depth).  Deterministic given
    cfg.seed.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    K = int(layers)
    if K < 1:
        raise ValueError("layers must be >= 1")
    weights = compute_analytic_weights(R)
    W = weights.entries
    A = R.entries

    train_rows, val_rows = _resolve_split(dataset, cfg)
    Y_tr = np.array([s.measurement for s in train_rows])
    G_tr = np.array([s.label for s in train_rows])
    Y_val = np.array([s.measurement for s in val_rows])
    G_val = np.array([s.label for s in val_rows])

    eta0 = 1.0 / largest_gram_eigenvalue(R)
    corr = np.abs(Y_tr @ np.conj(W))
    theta0 = 0.1 * eta0 * float(np.median(corr))
    theta = np.full(K, theta0)
    eta = np.full(K, eta0)

    depths = _epoch_depths(K, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    vel_theta = np.zeros(K)
    vel_eta = np.zeros(K)

    train_curve = []
    val_curve = []
    theta_traj = []
    eta_traj = []
    best = None  # (val_loss, epoch, theta, eta)

    fd = GradientMode(cfg.gradient_mode) is GradientMode.FINITE_DIFFERENCE
    for epoch, depth in enumerate(depths):
        order = rng.permutation(len(train_rows))
        for start in range(0, len(train_rows), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            Yb, Gb = Y_tr[sel], G_tr[sel]
            th_a, et_a = theta[:depth], eta[:depth]
            if fd:
                d_th, d_et = _fd_gradient(th_a, et_a, W, A, Yb, Gb, cfg.loss_mode, 1e-5)
            else:
                d_th, d_et = _analytic_gradient(th_a, et_a, W, A, Yb, Gb, cfg.loss_mode)
            if not (np.all(np.isfinite(d_th)) and np.all(np.isfinite(d_et))):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: non-finite gradient"
                )
            if cfg.tied:
                # one shared (theta, eta): accumulate over active layers,
                # update every layer so the tie is preserved under growth
                vel_theta[:] = cfg.momentum * vel_theta[0] + float(np.sum(d_th))
                vel_eta[:] = cfg.momentum * vel_eta[0] + float(np.sum(d_et))
                theta -= cfg.learning_rate * vel_theta
                eta -= cfg.learning_rate * vel_eta
            else:
                vel_theta[:depth] = cfg.momentum * vel_theta[:depth] + d_th
                vel_eta[:depth] = cfg.momentum * vel_eta[:depth] + d_et
                theta[:depth] -= cfg.learning_rate * vel_theta[:depth]
                eta[:depth] -= cfg.learning_rate * vel_eta[:depth]
            np.clip(theta, 0.0, None, out=theta)

        tr_out, _, _, _ = _unroll(theta[:depth], eta[:depth], W, A, Y_tr, keep_trace=False)
        val_out, _, _, _ = _unroll(theta[:depth], eta[:depth], W, A, Y_val, keep_trace=False)
        tr_loss = _loss_value(tr_out, G_tr, cfg.loss_mode)
        val_loss = _loss_value(val_out, G_val, cfg.loss_mode)
        if not (math.isfinite(tr_loss) and math.isfinite(val_loss)):
            raise RuntimeError(
                f"training diverged at epoch {epoch}: loss is non-finite "
                f"(train {tr_loss}, validation {val_loss})"
            )
        train_curve.append(tr_loss)
        val_curve.append(val_loss)
        theta_traj.append(theta.tolist())
        eta_traj.append(eta.tolist())
        if depth == K and (best is None or val_loss < best[0]):
            best = (val_loss, epoch, theta.copy(), eta.copy())

    provenance = sorted({s.label_provenance.value for s in dataset.samples})
    metadata = {
        "train_loss": train_curve,
        "validation_loss": val_curve,
        "theta_trajectory": theta_traj,
        "eta_trajectory": eta_traj,
        "selected_epoch": int(best[1]),
        "best_validation_loss": float(best[0]),
        "seed": int(cfg.seed),
        "label_provenance": provenance,
        "loss_mode": cfg.loss_mode,
        "gradient_mode": GradientMode(cfg.gradient_mode).value,
        "tied": bool(cfg.tied),
        "layer_depths": [int(d) for d in depths],
        "weight_constraint": "unit_diagonal",
    }
    return AlistaModel(weights, K, best[2], best[3], metadata)


def _nmse_db_capped(num: float, den: float) -> float:
    if den == 0.0:
        raise ValueError("NMSE undefined: truths carry zero energy")
    if num == 0.0:
        return 300.0
    return float(min(300.0, max(-300.0, -10.0 * math.log10(num / den))))


def sweep_layers(dataset, R: SteeringMatrix, k_range, cfg: TrainConfig):
    """Train one model per depth; returns [(K, validation NMSE in -dB)].

    Each depth trains from scratch with the same config/seed, then is scored
    on the validation rows by aggregate NMSE (higher is better).
    """
    ks = [int(k) for k in k_range]
    if not ks:
        raise ValueError("k_range must be nonempty")
    _, val_rows = _resolve_split(dataset, cfg)
    Y_val = np.array([s.measurement for s in val_rows])
    G_val = np.array([s.label for s in val_rows])
    curve = []
    for k in ks:
        model = train(dataset, R, k, cfg)
        out, _, _, _ = _unroll(
            model.theta, model.eta, model.weights.entries, R.entries, Y_val,
            keep_trace=False,
        )
        err = out - G_val
        num = float(np.sum(err.real**2 + err.imag**2))
        den = float(np.sum(G_val.real**2 + G_val.imag**2))
        curve.append((k, _nmse_db_capped(num, den)))
    return curve
