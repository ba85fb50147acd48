"""Pilot-driven correction network ``f(y)`` that maps received pulses onto ``t_th x``.

Two architectures are supported: an affine map of the 8 pulse samples
(``Linear``) and a single tanh hidden layer (``OneHidden``).  Training is
plain mini-batch gradient descent on the mean-squared error, implemented
with explicit backpropagation.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
import json
import math

import numpy as np

from .signal_chain import N_SAMPLES, PULSE_PROFILE, PulseSamples


class Mode(str, Enum):
    LINEAR = "Linear"
    ONE_HIDDEN = "OneHidden"


class Decision(str, Enum):
    KEEP = "Keep"
    RETRAIN = "Retrain"


class TrainingError(RuntimeError):
    pass


@dataclass
class EqualizerModel:
    """Correction network weights.

    For ``Linear`` the map is ``w_in[0] @ y + b_out``; ``b_in`` and
    ``w_out`` are kept at 0 and 1 so that both modes share one layout.
    """

    mode: Mode
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: float
    t_th_target: float
    hidden_size: int

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.w_in = np.asarray(self.w_in, dtype=float).reshape(-1, N_SAMPLES)
        self.b_in = np.asarray(self.b_in, dtype=float).reshape(-1)
        self.w_out = np.asarray(self.w_out, dtype=float).reshape(-1)
        self.b_out = float(self.b_out)
        h = 1 if self.mode is Mode.LINEAR else self.hidden_size
        if self.w_in.shape != (h, N_SAMPLES) or self.b_in.shape != (h,) or self.w_out.shape != (h,):
            raise ValueError("weight shapes inconsistent with mode and hidden_size")
        if not 0 < self.t_th_target <= 1:
            raise ValueError("t_th_target must lie in (0, 1]")

    def copy(self):
        return replace(self, w_in=self.w_in.copy(), b_in=self.b_in.copy(), w_out=self.w_out.copy())

    def to_dict(self):
        return {"mode": self.mode.value, "hidden_size": self.hidden_size,
                "t_th_target": self.t_th_target, "w_in": self.w_in.tolist(),
                "b_in": self.b_in.tolist(), "w_out": self.w_out.tolist(), "b_out": self.b_out}

    @classmethod
    def from_dict(cls, d):
        return cls(Mode(d["mode"]), np.array(d["w_in"]), np.array(d["b_in"]),
                   np.array(d["w_out"]), d["b_out"], d["t_th_target"], int(d["hidden_size"]))


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 1e-2
    epochs: int = 200
    batch: int = 64
    val_fraction: float = 0.2


@dataclass(frozen=True)
class TrainReport:
    epochs_run: int
    loss_history: list
    val_history: list
    final_val_loss: float
    converged: bool


@dataclass(frozen=True)
class RetrainPolicy:
    residual_threshold: float
    window: int

    def __post_init__(self):
        if not self.residual_threshold > 0:
            raise ValueError("residual_threshold must be positive")
        if self.window < 1:
            raise ValueError("window must be at least 1")


def default_residual_threshold(sigma2_hat, m):
    """Retraining threshold ``3 sqrt(sigma2_hat / m)`` tied to the estimation noise."""
    return 3.0 * math.sqrt(sigma2_hat / m)


def init_model(mode, hidden_size, t_th, rng):
    """Fresh model with Normal(0, 1/fan_in) weights and zero biases."""
    mode = Mode(mode)
    if mode is Mode.LINEAR:
        w_in = rng.normal(0.0, math.sqrt(1.0 / N_SAMPLES), (1, N_SAMPLES))
        return EqualizerModel(mode, w_in, np.zeros(1), np.ones(1), 0.0, t_th, hidden_size)
    if hidden_size < 1:
        raise ValueError("OneHidden mode needs hidden_size >= 1")
    w_in = rng.normal(0.0, math.sqrt(1.0 / N_SAMPLES), (hidden_size, N_SAMPLES))
    w_out = rng.normal(0.0, math.sqrt(1.0 / hidden_size), hidden_size)
    return EqualizerModel(mode, w_in, np.zeros(hidden_size), w_out, 0.0, t_th, hidden_size)


def _as_batch(y):
    if isinstance(y, PulseSamples):
        return y.samples[None, :], True
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != N_SAMPLES:
            raise ValueError(f"expected {N_SAMPLES} samples, got {arr.shape[0]}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != N_SAMPLES:
        raise ValueError(f"expected shape (n, {N_SAMPLES}), got {arr.shape}")
    return arr, False


def forward(model, y):
    """Evaluate ``f(y)`` for one pulse (returns float) or a batch ``(n, 8)``."""
    Y, single = _as_batch(y)
    if model.mode is Mode.LINEAR:
        out = Y @ model.w_in[0] + model.b_out
    else:
        out = np.tanh(Y @ model.w_in.T + model.b_in) @ model.w_out + model.b_out
    return float(out[0]) if single else out


def apply(model, pulses):
    """Correct a sequence of signal pulses with a model trained on pilots."""
    Y = np.asarray([p.samples if isinstance(p, PulseSamples) else p for p in pulses], dtype=float)
    if Y.size == 0:
        return np.zeros(0)
    return forward(model, Y)


def _grads(model, Y, target):
    """Mean-squared-error loss and its gradient with respect to every trainable parameter."""
    n = len(Y)
    if model.mode is Mode.LINEAR:
        f = Y @ model.w_in[0] + model.b_out
        r = f - target
        d = 2.0 * r / n
        return float(np.mean(r * r)), {"w_in": (d @ Y)[None, :], "b_out": np.array(d.sum())}
    a = Y @ model.w_in.T + model.b_in
    h = np.tanh(a)
    f = h @ model.w_out + model.b_out
    r = f - target
    d = 2.0 * r / n
    da = np.outer(d, model.w_out) * (1.0 - h * h)
    return float(np.mean(r * r)), {"w_in": da.T @ Y, "b_in": da.sum(axis=0),
                                   "w_out": h.T @ d, "b_out": np.array(d.sum())}


def _trainable(model):
    if model.mode is Mode.LINEAR:
        return ("w_in", "b_out")
    return ("w_in", "b_in", "w_out", "b_out")


def _loss(model, Y, target):
    r = forward(model, Y) - target
    return float(np.mean(r * r))


def _normalise(model, s_in, s_out):
    """Express a model in coordinates where inputs and targets are divided by the scales."""
    m = model.copy()
    if m.mode is Mode.LINEAR:
        m.w_in = m.w_in * (s_in / s_out)
    else:
        m.w_in = m.w_in * s_in
        m.w_out = m.w_out / s_out
    m.b_out = m.b_out / s_out
    return m


def _denormalise(model, s_in, s_out):
    m = model.copy()
    if m.mode is Mode.LINEAR:
        m.w_in = m.w_in * (s_out / s_in)
    else:
        m.w_in = m.w_in / s_in
        m.w_out = m.w_out * s_out
    m.b_out = m.b_out * s_out
    return m


def train(model, pilots, pilot_x, hyper, rng, mirror=False):
    """Fit the model so that ``f(y) ~= t_th * x`` on pilot pulses.

    Inputs and targets are rescaled to unit root-mean-square norm before
    descent and the scales are folded back into the returned weights, so
    the learning rate is insensitive to pilot power.  Losses in the report
    are in original units (SNU).

    Parameters
    ----------
    model : EqualizerModel
        Starting point (fresh or warm start).
    pilots : array_like, shape (n, 8)
        Received pilot pulses.
    pilot_x : array_like, shape (n,)
        Transmitted pilot quadratures.
    hyper : TrainHyper
    rng : numpy.random.Generator
        Drives the validation split and the mini-batch order.
    mirror : bool
        Add the sign-flipped copy ``(-y, -x)`` of every pilot after the
        validation split, so that each pair stays on one side of it.  With
        a single public pilot value this is what pins the offset of an odd
        (linear) channel; the balanced copies keep the fitted bias at zero
        instead of letting it absorb pilot noise.

    Returns
    -------
    (EqualizerModel, TrainReport)
    """
    Y, _ = _as_batch(np.asarray([p.samples if isinstance(p, PulseSamples) else p for p in pilots]))
    target = model.t_th_target * np.asarray(pilot_x, dtype=float)
    n = len(Y)
    if n < 100:
        raise ValueError("training needs at least 100 pilot pairs")
    if len(target) != n:
        raise ValueError("pilots and pilot_x differ in length")
    perm = rng.permutation(n)
    n_val = int(round(hyper.val_fraction * n))
    val, tr = perm[:n_val], perm[n_val:]
    if mirror:
        Y = np.vstack([Y, -Y])
        target = np.r_[target, -target]
        val, tr = np.r_[val, val + n], np.r_[tr, tr + n]
    s_in = math.sqrt(np.mean(np.sum(Y[tr] ** 2, axis=1))) or 1.0
    s_out = math.sqrt(np.mean(target[tr] ** 2)) or 1.0
    Yn, tn = Y / s_in, target / s_out
    m = _normalise(model, s_in, s_out)
    names = _trainable(m)
    lr = hyper.learning_rate
    batch = max(1, min(hyper.batch, len(tr)))
    scale2 = s_out * s_out
    history, val_history = [], []
    for epoch in range(hyper.epochs):
        order = tr[rng.permutation(len(tr))]
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            _, g = _grads(m, Yn[idx], tn[idx])
            for name in names:
                if name == "b_out":
                    m.b_out -= lr * float(g[name])
                else:
                    setattr(m, name, getattr(m, name) - lr * g[name])
        train_loss = _loss(m, Yn[tr], tn[tr]) * scale2
        val_loss = _loss(m, Yn[val], tn[val]) * scale2 if n_val else train_loss
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"non-finite loss at epoch {epoch} (learning_rate={lr}); "
                                "reduce the learning rate")
        history.append(train_loss)
        val_history.append(val_loss)
    converged = len(history) >= 2 and abs(history[-1] - history[-2]) <= 1e-4 * max(history[-2], 1e-300)
    final_val = val_history[-1] if val_history else _loss(m, Yn, tn) * scale2
    report = TrainReport(len(history), history, val_history, final_val, bool(converged))
    return _denormalise(m, s_in, s_out), report


def gradient_check(model, y, x, step=1e-5):
    """Worst relative gap between backpropagation and central finite differences.

    The loss is the squared error of one sample against ``t_th * x``.  For
    each parameter tensor the discrepancy is the normwise relative error
    ``||g_bp - g_fd|| / (||g_bp|| + ||g_fd||)`` (0 when both vanish).  The
    finite differences are evaluated in extended precision so that their
    cancellation error stays well below the tolerance being checked.
    """
    Y, _ = _as_batch(y)
    target = np.array([model.t_th_target * float(x)])
    _, g = _grads(model, Y, target)
    worst = 0.0
    for name in _trainable(model):
        analytic = np.atleast_1d(g[name]).astype(float)
        shape = analytic.shape
        fd = np.array([_fd_component(model, name, i, Y, target, step) for i in np.ndindex(shape)],
                      dtype=float).reshape(shape)
        denom = np.linalg.norm(analytic) + np.linalg.norm(fd)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(analytic - fd) / denom))
    return worst


def _loss_ext(params, mode, Y, target):
    w_in, b_in, w_out, b_out = params
    if mode is Mode.LINEAR:
        f = Y @ w_in[0] + b_out
    else:
        f = np.tanh(Y @ w_in.T + b_in) @ w_out + b_out
    r = f - target
    return np.mean(r * r)


def _fd_component(model, name, i, Y, target, step):
    ext = np.longdouble
    base = {"w_in": model.w_in.astype(ext), "b_in": model.b_in.astype(ext),
            "w_out": model.w_out.astype(ext), "b_out": np.array([model.b_out], dtype=ext)}
    Ye, te = Y.astype(ext), target.astype(ext)
    h = ext(step)

    def loss_at(delta):
        p = {k: v.copy() for k, v in base.items()}
        p[name][i if name != "b_out" else (0,)] += delta
        return _loss_ext((p["w_in"], p["b_in"], p["w_out"], p["b_out"][0]), model.mode, Ye, te)

    return float((loss_at(h) - loss_at(-h)) / (2 * h))


def residual_check(model, pilots, pilot_x, policy):
    """Decide whether the model still fits the most recent pilots.

    Retrain when the root-mean-square of ``f(y) - t_th x`` over the last
    ``policy.window`` pilots exceeds ``policy.residual_threshold``.
    """
    Y, _ = _as_batch(np.asarray(pilots, dtype=float))
    x = np.asarray(pilot_x, dtype=float)
    if policy.window > len(Y):
        raise ValueError("window larger than the available pilots")
    Y, x = Y[-policy.window:], x[-policy.window:]
    r = forward(model, Y) - model.t_th_target * x
    rms = math.sqrt(float(np.mean(r * r)))
    return Decision.RETRAIN if rms > policy.residual_threshold else Decision.KEEP


def input_jacobian(model, y):
    """Derivative of ``f`` with respect to each of the 8 input samples, per pulse."""
    Y, _ = _as_batch(y)
    if model.mode is Mode.LINEAR:
        return np.broadcast_to(model.w_in[0], Y.shape).copy()
    h = np.tanh(Y @ model.w_in.T + model.b_in)
    return ((1.0 - h * h) * model.w_out) @ model.w_in


def noise_gains(model, y):
    """Average power gains that the model applies to detector noise.

    Returns
    -------
    mode_gain2 : float
        Mean of ``(J . g)**2``; noise carried by the optical mode (shot and
        excess noise) follows the pulse profile ``g``.
    electronic_gain2 : float
        Mean of ``|J|**2``; electronic noise is independent per sample.
    """
    J = input_jacobian(model, y)
    if len(J) == 0:
        return 0.0, 0.0
    return float(np.mean((J @ PULSE_PROFILE) ** 2)), float(np.mean(np.sum(J * J, axis=1)))


def correlation(a, b):
    """Pearson correlation coefficient of two equal-length sequences."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("correlation needs two equal-length sequences of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if sa == 0 or sb == 0:
        raise ValueError("correlation undefined for a zero-variance sequence")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def save_checkpoint(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        return EqualizerModel.from_dict(json.load(fh))


def save_loss_history(report, path):
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (t, v) in enumerate(zip(report.loss_history, report.val_history)):
            fh.write(f"{i},{t!r},{v!r}\n")
