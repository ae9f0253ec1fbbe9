"""Loss, implicit differentiation through the fixed point, Adam, and the training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from optideq import cells
from optideq.cells import CellSpec
from optideq.deq import EnsembleModel, forward_batch
from optideq.errors import ConfigurationError, TrainingError

MAX_CONDITION = 1e8


def cross_entropy(logits, labels):
    """Softmax cross-entropy for logit pairs.

    Works on a single pair with an integer label, or on a batch (n, 2) with
    labels (n,). Returns ``(loss, dloss/dlogits)`` with the same leading shape.
    """
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels)
    zmax = np.max(z, axis=-1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.sum(np.exp(shifted), axis=-1))
    onehot = np.stack([y == 0, y == 1], axis=-1).astype(float)
    loss = lse - np.sum(shifted * onehot, axis=-1)
    grad = np.exp(shifted - lse[..., None]) - onehot
    if loss.ndim == 0:
        return float(loss), grad
    return loss, grad


# -- implicit differentiation ----------------------------------------------

def _block_jacobian(prep, s, spec, calib, alpha, beta):
    """Jacobian of the iteration map at states ``s`` (n, d) plus reusable pieces."""
    n, d = s.shape
    slope, e, a, a0 = cells.emitter_slope(s, spec, calib)
    A = prep.linear
    PA = np.broadcast_to(A, (n, d, d))
    P = None
    if spec.magnitude("power_norm"):
        P = cells.power_norm_jacobian(e @ A.T, spec.stages[6].target_rms)
        PA = P @ A
    J = beta * PA * slope[:, None, :]
    J = J + alpha * np.eye(d)
    return J, P, e, a, a0, A


def implicit_backward(model: EnsembleModel, X, fixed_points, dL_dlogits,
                      through_impairments: bool = True) -> dict:
    """Gradients of a loss w.r.t. every parameter, summed over the batch.

    ``fixed_points`` holds one (n, d_hidden) array per block and
    ``dL_dlogits`` is (n, 2). For each block the adjoint ``u`` solves
    ``(I - J)^T u = dL/ds*`` with ``J`` the Jacobian of the iteration map at
    the fixed point; parameter gradients follow from the explicit dependence
    of the map on each parameter. Quantisation is passed straight through.

    With ``through_impairments=False`` the backward pass uses the ideal
    cell, so calibration gains receive zero gradient.
    """
    cfg = model.config
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = np.atleast_2d(np.asarray(dL_dlogits, dtype=float))
    n, d = X.shape[0], cfg.d_hidden
    spec = cfg.cell if through_impairments else CellSpec.simple()
    calib = model.calib if (through_impairments and model.calib is not None) else None
    alpha, beta = cfg.alpha, cfg.beta
    eye = np.eye(d)

    z = np.concatenate(fixed_points, axis=1)
    grads = {"W_op": G.T @ z, "b_op": G.sum(axis=0)}
    g_calib = np.zeros(len(cells.CALIB_STAGES))

    for k, blk in enumerate(model.blocks):
        s = fixed_points[k]
        prep = cells.prepare(blk.W, spec, calib)
        J, P, e, a, a0, A = _block_jacobian(prep, s, spec, calib, alpha, beta)
        g_s = G @ model.W_op[:, k * d:(k + 1) * d]
        M = eye - J
        try:
            u = np.linalg.solve(np.swapaxes(M, 1, 2), g_s[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            u = None
        if u is None or not np.all(np.isfinite(u)):
            cond = float(np.max(np.linalg.cond(M)))
            raise TrainingError(f"block {k}: I - J is singular (condition number {cond:.3g})")
        cond = np.linalg.cond(M)
        if np.max(cond) > MAX_CONDITION:
            raise TrainingError(f"block {k}: I - J is ill-conditioned (condition number {np.max(cond):.3g})")

        # q = dL/dr, r the cell output before power normalisation
        q = u if P is None else np.einsum("nij,ni->nj", P, u)
        q = beta * q

        grads[f"b.{k}"] = u.sum(axis=0)
        grads[f"b_ip.{k}"] = u.sum(axis=0)
        grads[f"W_ip.{k}"] = u.T @ X

        if spec.is_aoc:
            c = calib
            mix_t_q = q @ prep.mix
            zbar = c[2] * c[3] * prep.gains * mix_t_q
            dW_eff = zbar.T @ e
            e3 = spec.magnitude("slm_distortion")
            Wq = prep.W_q
            grads[f"W.{k}"] = dW_eff * (c[1] * (1.0 - 3.0 * e3 * Wq * Wq))
            g_calib[1] += np.sum(dW_eff * (Wq * (1.0 - e3 * Wq * Wq)))
            y = (e @ prep.W_eff.T) * prep.gains
            mixed = y @ prep.mix.T
            g_calib[2] += c[3] * np.sum(q * mixed)
            e6 = spec.magnitude("darkness")
            g_calib[3] += np.sum(q * (c[2] * mixed + e6 * e.mean(axis=1, keepdims=True)))
            ebar = q @ A
            e2 = spec.magnitude("microled")
            g_calib[0] += np.sum(ebar * (1.0 - 2.0 * e2 * np.abs(a)) * a0)
        else:
            grads[f"W.{k}"] = q.T @ e

    if model.calib is not None:
        grads["calib"] = g_calib
    return grads


def deq_loss_and_grads(model: EnsembleModel, X, y, through_impairments: bool = True):
    """Mean cross-entropy over a batch and its gradients.

    Returns ``(loss, grads, converged)``; when any block fails to converge
    the gradients are ``None``.
    """
    out = forward_batch(model, X)
    losses, dz = cross_entropy(out.logits, y)
    if not out.all_converged:
        return float(np.mean(losses)), None, False
    n = len(y)
    grads = implicit_backward(model, X, out.states, dz / n, through_impairments)
    return float(np.mean(losses)), grads, True


def loss_and_grads(model, X, y, through_impairments: bool = True):
    if isinstance(model, EnsembleModel):
        return deq_loss_and_grads(model, X, y, through_impairments)
    loss, grads = model.loss_and_grads(X, y)
    return loss, grads, True


# -- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_update(params: dict, grads: dict, state: AdamState, lr: float, lr_scale: dict | None = None):
    """Bias-corrected Adam step, applied in place.

    Uses the folded form ``lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t)`` with
    ``eps`` added to the uncorrected ``sqrt(v)``. ``lr_scale`` optionally
    multiplies the step of named tensors.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr_t = lr * math.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        scale = 1.0 if lr_scale is None else lr_scale.get(name, 1.0)
        p -= (lr_t * scale) * m / (np.sqrt(v) + state.eps)
    return params, state


# -- training loop ---------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 256
    patience: int = 10
    max_epochs: int = 80
    seed: int = 0
    monitor: str = "val_bacc"
    max_skip_fraction: float = 0.1
    through_impairments: bool = True
    # cap on each block's loop gain after every step (see project_contraction); None or 0 disables it
    max_recurrent_gain: float | None = 0.45
    # step multiplier for the four global AOCCell calibration gains
    calib_lr_scale: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigurationError("learning_rate, batch_size, patience and max_epochs must be positive")
        if self.patience > self.max_epochs:
            raise ConfigurationError("patience must not exceed max_epochs")
        if self.calib_lr_scale < 0:
            raise ConfigurationError("calib_lr_scale must be >= 0")


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    @property
    def best_metric(self) -> float:
        return self.metrics[self.best_epoch - 1]

    def to_text(self) -> str:
        lines = ["epoch\tloss\tmetric\tskipped"]
        for i, (loss, metric, sk) in enumerate(zip(self.losses, self.metrics, self.skipped), start=1):
            lines.append(f"{i}\t{loss:.17g}\t{metric:.17g}\t{sk}")
        lines.append(f"# best_epoch={self.best_epoch} stop_reason={self.stop_reason}")
        return "\n".join(lines) + "\n"


def loop_gain(W, spec, calib, beta: float) -> float:
    """Upper bound on the Lipschitz constant of ``s -> beta * cell(W, s)``.

    |beta| times the spectral norm of the folded linear map times the largest
    emitter slope (the cubic tanh correction peaks at ``1 + e1`` at zero).
    """
    if not spec.is_aoc:
        return abs(beta) * float(np.linalg.norm(W, 2))
    prep = cells.prepare(W, spec, calib)
    slope = abs(prep.calib[0]) * (1.0 + abs(spec.magnitude("tanh_approx")))
    return abs(beta) * slope * float(np.linalg.norm(prep.linear, 2))


def project_contraction(model: EnsembleModel, max_gain: float, rounds: int = 20) -> None:
    """Rescale each block's W in place until its loop gain is at most ``max_gain``.

    For SimpleCell one rescale is exact. Quantisation and SLM distortion make
    the AOC gain slightly nonlinear in W, so the rescale repeats until the gain
    is under the cap (it converges geometrically, usually in two or three rounds).
    """
    beta = model.config.beta
    if beta == 0:
        return
    spec = model.config.cell
    for blk in model.blocks:
        for _ in range(rounds):
            gain = loop_gain(blk.W, spec, model.calib, beta)
            if gain <= max_gain:
                break
            blk.W *= max_gain / gain * (1.0 - 1e-9)


def _unpack(data):
    if hasattr(data, "X"):
        return np.asarray(data.X, dtype=float), np.asarray(data.y)
    X, y = data
    return np.asarray(X, dtype=float), np.asarray(y)


def _val_bacc(model, data):
    from optideq.evalkit import balanced_accuracy

    X, y = _unpack(data)
    return balanced_accuracy(model.predict(X), y)


def train(model, train_set, val_set, config: TrainConfig = TrainConfig(), evaluate=None, log=None):
    """Mini-batch Adam with early stopping on a validation metric.

    The model is trained in place on a working copy; the best snapshot (by
    validation metric, higher is better) is returned with the history.
    ``evaluate(model, val_set) -> float`` overrides the default balanced
    accuracy.
    """
    X, y = _unpack(train_set)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ConfigurationError("training set is empty or misaligned")
    evaluate = evaluate or _val_bacc
    work = model.copy()
    params = work.params()
    state = AdamState()
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    best, best_metric, stale = work.copy(), -np.inf, 0
    n = X.shape[0]
    lr_scale = {"calib": config.calib_lr_scale}

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        batch_losses, skipped, batches = [], 0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batches += 1
            loss, grads, ok = loss_and_grads(work, X[idx], y[idx], config.through_impairments)
            if not ok:
                skipped += 1
                continue
            adam_update(params, grads, state, config.learning_rate, lr_scale)
            if config.max_recurrent_gain and isinstance(work, EnsembleModel):
                project_contraction(work, config.max_recurrent_gain)
            batch_losses.append(loss)
        if skipped > config.max_skip_fraction * batches:
            raise TrainingError(
                f"epoch {epoch}: {skipped}/{batches} batches skipped for non-converged fixed points")
        metric = float(evaluate(work, val_set))
        history.losses.append(float(np.mean(batch_losses)) if batch_losses else float("nan"))
        history.metrics.append(metric)
        history.skipped.append(skipped)
        if log is not None:
            log(epoch, history.losses[-1], metric)
        if metric > best_metric:
            best_metric, stale = metric, 0
            best = work.copy()
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                history.stop_reason = "patience"
                break
    else:
        history.stop_reason = "max_epochs"
    return best, history
