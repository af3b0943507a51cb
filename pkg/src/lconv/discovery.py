"""Symmetry discovery: datasets, optimizers, and the two training pipelines.

Fixed-small-angle regression: random 7x7 images, outputs rotated by a
fixed theta = pi/10; a single residual layer with W0 = 1 frozen learns a
dense generator so that (I + L) f ~ R f.  The problem is an exactly
realizable linear regression, so the least-squares solve provides an
independent oracle for both the achievable loss and the learned matrix.

Recursive angle regression: pairs (f, R(theta) f) with theta uniform in
[0, theta_max); f is broadcast into m identical channels, pushed through
the same L-conv layer t times (W0 = I frozen), contracted against the
rotated image channel-wise through tanh, and read out by a small
fully-connected head.  Training the generator on this task recovers the
rotation generator up to scale and sign (the model is exactly invariant
under (L, eps) -> (-L, -eps), so the sign of the learned generator is
seed dependent).

Everything is deterministic given (seed, config): data, shuffling, and
initialization draw from separate PCG64 streams at fixed offsets from the
task seed (data seed, seed+1 for the test split, seed+2 init, seed+3
shuffling), and the minibatch loop is single threaded.
"""

import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .groups import rotation_matrix_bilinear, sw_rotation_generator
from .layer import LConvLayer, load_checkpoint, materialize, save_checkpoint
from .numerics import (LconvError, SeededRng, cosine_correlation,
                       least_squares_solve, read_matrix, write_matrix)


class NonFiniteGradientError(LconvError):
    pass


class TrainingDivergedError(LconvError):
    def __init__(self, message, last_epoch, report=None):
        super().__init__(message)
        self.last_epoch = last_epoch
        self.report = report


@dataclass
class OptimizerConfig:
    kind: str = "adam"            # "adam" | "sgd"
    lr: float = 1e-2
    batch_size: int = 64
    epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise LconvError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise LconvError("batch size must be >= 1")
        if self.kind not in ("adam", "sgd"):
            raise LconvError(f"unknown optimizer kind {self.kind!r}")


def _check_grads(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(
                f"non-finite gradient for parameter {name!r}; update rejected")


def adam_init(params):
    return {"t": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params, grads, state, cfg):
    """Standard bias-corrected Adam update, in place."""
    _check_grads(grads)
    state["t"] += 1
    t = state["t"]
    b1, b2 = cfg.beta1, cfg.beta2
    for k, g in grads.items():
        m = state["m"][k]
        v = state["v"][k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        params[k] -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
    return params, state


def sgd_step(params, grads, cfg):
    _check_grads(grads)
    for k, g in grads.items():
        params[k] -= cfg.lr * g
    return params


@dataclass
class FixedAngleTask:
    width: int = 7
    height: int = 7
    theta: float = np.pi / 10
    n_train: int = 50000
    n_test: int = 10000
    seed: int = 0

    @property
    def d(self):
        return self.width * self.height


@dataclass
class AngleRegressionTask:
    width: int = 7
    height: int = 7
    theta_max: float = np.pi / 3
    m_copies: int = 10
    recursions: int = 3
    hidden: int = 5
    n_train: int = 12000
    n_test: int = 2000
    seed: int = 0

    @property
    def d(self):
        return self.width * self.height


@dataclass
class TrainReport:
    kind: str
    config: dict
    seed: int
    loss_curve: list = field(default_factory=list)  # (epoch, train_mse, test_mse)
    final_test_mse: float = float("nan")
    correlations: dict = field(default_factory=dict)
    wall_clock_sec: float = 0.0
    arrays: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        """JSON-safe summary; learned matrices are saved separately."""
        d = asdict(self)
        d.pop("arrays")
        return d


def gen_fixed_angle_dataset(task):
    """Columns are samples: X is d x N random pixels in [-0.5, 0.5),
    Y = R(theta) X.  Train and test splits use seeds (seed, seed + 1)."""
    r = rotation_matrix_bilinear(task.width, task.height, task.theta).matrix
    out = {}
    for split, seed, n in (("train", task.seed, task.n_train),
                           ("test", task.seed + 1, task.n_test)):
        if n < 1:
            raise LconvError(f"{split} split needs at least one sample")
        x = SeededRng(seed).uniform(task.d, n)
        out[f"x_{split}"] = x
        out[f"y_{split}"] = r @ x
    out["rotation"] = r
    return out


def _mse(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff))


def _safe_corr(a, b):
    """Cosine correlation, or None when either matrix is numerically zero."""
    if np.linalg.norm(a) < 1e-12 or np.linalg.norm(b) < 1e-12:
        return None
    return cosine_correlation(a, b)


def save_train_state(directory, layer, params, state, next_epoch, head_names=()):
    """Layer checkpoint plus optimizer moments, enough to resume exactly."""
    extra = {"epoch": int(next_epoch),
             "adam_t": int(state["t"]) if state else 0,
             "head": list(head_names)}
    save_checkpoint(layer, directory, extra=extra)
    for name in head_names:
        write_matrix(os.path.join(directory, f"head_{name}.mat"),
                     np.atleast_2d(params[name]))
    with open(os.path.join(directory, "param_shapes.json"), "w") as fh:
        json.dump({k: list(np.shape(v)) for k, v in params.items()},
                  fh, sort_keys=True)
    if state:
        for name in params:
            write_matrix(os.path.join(directory, f"adam_m_{name}.mat"),
                         np.atleast_2d(state["m"][name]))
            write_matrix(os.path.join(directory, f"adam_v_{name}.mat"),
                         np.atleast_2d(state["v"][name]))


def load_train_state(directory):
    """Inverse of save_train_state: (layer, params, state, start_epoch)."""
    layer, manifest = load_checkpoint(directory)
    extra = manifest["extra"]
    params = {"gen": np.array(materialize(layer.generators[0]))}
    if not layer.scalar_eps:
        params["eps"] = np.array(layer.eps[0])
    for name in extra.get("head", []):
        params[name] = read_matrix(os.path.join(directory, f"head_{name}.mat"))
    state = None
    with open(os.path.join(directory, "param_shapes.json")) as fh:
        shapes = json.load(fh)
    for name, shape in shapes.items():
        if name in params:
            params[name] = params[name].reshape(shape)
    if os.path.exists(os.path.join(directory, "adam_m_gen.mat")):
        state = {"t": extra["adam_t"], "m": {}, "v": {}}
        for name, shape in shapes.items():
            state["m"][name] = read_matrix(
                os.path.join(directory, f"adam_m_{name}.mat")).reshape(shape)
            state["v"][name] = read_matrix(
                os.path.join(directory, f"adam_v_{name}.mat")).reshape(shape)
    return layer, params, state, extra["epoch"]


def train_fixed_angle(task, opt, resume_dir=None, checkpoint_dir=None):
    """Learn a dense generator from fixed-angle rotation pairs.

    Minimizes mean ||(I + L) f - R f||^2 over the training set with the
    residual path frozen (W0 = 1, eps = 1).  Reports the cosine
    correlation of the learned L against the least-squares oracle
    R_ls - I and against the exact R - I.  A resumed run reproduces the
    unbroken run exactly: epochs continue from the checkpoint counter and
    the shuffle stream is fast-forwarded to match.
    """
    t0 = time.perf_counter()
    data = gen_fixed_angle_dataset(task)
    x_train, y_train = data["x_train"], data["y_train"]
    x_test, y_test = data["x_test"], data["y_test"]
    d = task.d

    start_epoch = 0
    if resume_dir:
        _, params, state, start_epoch = load_train_state(resume_dir)
        layer = LConvLayer(w0=np.array([[1.0]]), eps=[1.0],
                           generators=[params["gen"]], scalar_eps=True,
                           train_w0=False, train_eps=False)
        if state is None and opt.kind == "adam":
            state = adam_init(params)
    else:
        init = SeededRng(task.seed + 2)
        params = {"gen": init.uniform_signed(1.0 / np.sqrt(d), (d, d))}
        layer = LConvLayer(w0=np.array([[1.0]]), eps=[1.0], generators=[params["gen"]],
                           scalar_eps=True, train_w0=False, train_eps=False)
        state = adam_init(params) if opt.kind == "adam" else None
    shuffle = SeededRng(task.seed + 3)
    n = x_train.shape[1]
    for _ in range(start_epoch):
        shuffle.permutation(n)

    report = TrainReport(kind="fixed-angle", config=_echo(task, opt), seed=task.seed)
    for epoch in range(start_epoch, opt.epochs):
        perm = shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, opt.batch_size):
            idx = perm[start:start + opt.batch_size]
            fb = x_train[:, idx].T[:, :, None]
            yb = y_train[:, idx].T[:, :, None]
            pred = layer.forward(fb)
            diff = pred - yb
            batch_loss = float(np.mean(diff * diff))
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}", epoch, report)
            total += batch_loss * idx.size
            grads = layer.backward(fb, 2.0 * diff / diff.size)
            gdict = {"gen": grads.d_generators[0]}
            if opt.kind == "adam":
                adam_step(params, gdict, state, opt)
            else:
                sgd_step(params, gdict, opt)
        train_mse = total / n
        test_mse = _eval_linear(layer, x_test, y_test)
        report.loss_curve.append((epoch, train_mse, test_mse))

    learned = params["gen"]
    r_ls = least_squares_solve(x_train, y_train)
    eye = np.eye(d)
    report.final_test_mse = (report.loss_curve[-1][2] if report.loss_curve
                             else _eval_linear(layer, x_test, y_test))
    report.correlations = {
        "vs_ls_oracle": _safe_corr(learned, r_ls - eye),
        "vs_exact_rotation": _safe_corr(learned, data["rotation"] - eye),
        "vs_sw_rotation_generator": _safe_corr(
            learned, sw_rotation_generator(task.width, task.height).dense),
    }
    report.arrays = {"generator": learned.copy(), "ls_rotation": r_ls}
    if checkpoint_dir:
        save_train_state(checkpoint_dir, layer, params, state, opt.epochs)
    report.wall_clock_sec = time.perf_counter() - t0
    return report


def _eval_linear(layer, x, y, chunk=4096):
    total = 0.0
    n = x.shape[1]
    for start in range(0, n, chunk):
        fb = x[:, start:start + chunk].T[:, :, None]
        yb = y[:, start:start + chunk].T[:, :, None]
        diff = layer.forward(fb) - yb
        total += float(np.sum(diff * diff))
    return total / (n * x.shape[0])


def rotate_images(images, thetas, width, height, chunk=2048):
    """Rotate each row image by its own angle via bilinear resampling."""
    n, d = images.shape
    out = np.empty_like(images)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        out[sl] = _rotate_chunk(images[sl], thetas[sl], width, height)
    return out


def _rotate_chunk(images, thetas, width, height):
    from .groups import image_coords
    x, y = image_coords(width, height)
    c = np.cos(thetas)[:, None]
    s = np.sin(thetas)[:, None]
    col = (c * x[None, :] - s * y[None, :]) + (width - 1) / 2.0
    row = (s * x[None, :] + c * y[None, :]) + (height - 1) / 2.0
    c0 = np.floor(col)
    r0 = np.floor(row)
    fc = col - c0
    fr = row - r0
    out = np.zeros_like(images)
    rows_idx = np.arange(images.shape[0])[:, None]
    for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                      (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr = r0 + dr
        cc = c0 + dc
        ok = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
        src = np.where(ok, (rr * width + cc).astype(int), 0)
        out += np.where(ok, w * images[rows_idx, src], 0.0)
    return out


def gen_angle_pairs_dataset(task):
    """Samples (f, R(theta) f, theta) with theta uniform in [0, theta_max)."""
    out = {}
    for split, seed, n in (("train", task.seed, task.n_train),
                           ("test", task.seed + 1, task.n_test)):
        if n < 1:
            raise LconvError(f"{split} split needs at least one sample")
        rng = SeededRng(seed)
        f = rng.uniform(n, task.d)
        theta = rng.uniform(n, 1, low=0.0, high=task.theta_max).ravel()
        out[f"f_{split}"] = f
        out[f"y_{split}"] = rotate_images(f, theta, task.width, task.height)
        out[f"theta_{split}"] = theta
    return out


def _angle_params(task, rng):
    # eps at +-0.3 keeps all channel paths active through t recursions; the
    # generator starts in the skew subspace (at the usual 1/sqrt(d) scale,
    # unconstrained afterwards), which empirically halves the symmetric
    # residue left in the recovered generator
    d, m, h = task.d, task.m_copies, task.hidden
    a = rng.uniform_signed(1.0 / np.sqrt(d), (d, d))
    return {
        "eps": rng.uniform_signed(0.3, (m, m)),
        "gen": (a - a.T) / np.sqrt(2.0),
        "v1": rng.uniform_signed(1.0 / np.sqrt(m), (m, h)),
        "b1": np.zeros(h),
        "v2": rng.uniform_signed(1.0 / np.sqrt(h), (h, 1)),
        "b2": np.zeros(1),
    }


def _angle_forward(params, layer, f, y, t, m):
    """Returns (prediction, stash for backward)."""
    h = np.repeat(f[:, :, None], m, axis=2)
    hs = [h]
    for _ in range(t):
        h = layer.forward(h)
        hs.append(h)
    g_pre = np.einsum("bd,bdm->bm", y, h)
    g = np.tanh(g_pre)
    a1 = np.tanh(g @ params["v1"] + params["b1"])
    pred = (a1 @ params["v2"] + params["b2"]).ravel()
    return pred, (hs, g, a1)


def _angle_backward(params, layer, f, y, theta, pred, stash):
    hs, g, a1 = stash
    n = theta.size
    dpred = (2.0 / n) * (pred - theta)
    dv2 = a1.T @ dpred[:, None]
    db2 = np.array([dpred.sum()])
    da1 = dpred[:, None] @ params["v2"].T
    da1p = da1 * (1.0 - a1 * a1)
    dv1 = g.T @ da1p
    db1 = da1p.sum(axis=0)
    dg = (da1p @ params["v1"].T) * (1.0 - g * g)
    dh = y[:, :, None] * dg[:, None, :]
    d_eps = np.zeros_like(params["eps"])
    d_gen = np.zeros_like(params["gen"])
    for k in range(len(hs) - 2, -1, -1):
        grads = layer.backward(hs[k], dh)
        d_eps += grads.d_eps[0]
        d_gen += grads.d_generators[0]
        dh = grads.d_input
    return {"eps": d_eps, "gen": d_gen, "v1": dv1, "b1": db1,
            "v2": dv2, "b2": db2}


_HEAD_NAMES = ("v1", "b1", "v2", "b2")


def train_angle_regression(task, opt, resume_dir=None, checkpoint_dir=None):
    """Learn the rotation generator by regressing the angle between pairs."""
    t0 = time.perf_counter()
    data = gen_angle_pairs_dataset(task)
    m, t = task.m_copies, task.recursions

    start_epoch = 0
    if resume_dir:
        _, params, state, start_epoch = load_train_state(resume_dir)
        params["b1"] = params["b1"].ravel()
        params["b2"] = params["b2"].ravel()
        if state is None and opt.kind == "adam":
            state = adam_init(params)
    else:
        params = _angle_params(task, SeededRng(task.seed + 2))
        state = adam_init(params) if opt.kind == "adam" else None
    layer = LConvLayer(w0=np.eye(m), eps=[params["eps"]],
                       generators=[params["gen"]], train_w0=False)
    shuffle = SeededRng(task.seed + 3)

    report = TrainReport(kind="angle-regression", config=_echo(task, opt),
                         seed=task.seed)
    f_train, y_train = data["f_train"], data["y_train"]
    theta_train = data["theta_train"]
    n = theta_train.size
    for _ in range(start_epoch):
        shuffle.permutation(n)
    for epoch in range(start_epoch, opt.epochs):
        perm = shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, opt.batch_size):
            idx = perm[start:start + opt.batch_size]
            fb, yb, tb = f_train[idx], y_train[idx], theta_train[idx]
            pred, stash = _angle_forward(params, layer, fb, yb, t, m)
            batch_loss = _mse(pred, tb)
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}", epoch, report)
            total += batch_loss * idx.size
            grads = _angle_backward(params, layer, fb, yb, tb, pred, stash)
            if opt.kind == "adam":
                adam_step(params, grads, state, opt)
            else:
                sgd_step(params, grads, opt)
        train_mse = total / n
        test_mse = _eval_angle(params, layer, data, t, m)
        report.loss_curve.append((epoch, train_mse, test_mse))

    gt = sw_rotation_generator(task.width, task.height).dense
    report.final_test_mse = (report.loss_curve[-1][2] if report.loss_curve
                             else _eval_angle(params, layer, data, t, m))
    report.correlations = {
        "vs_sw_rotation_generator": _safe_corr(params["gen"], gt),
    }
    report.arrays = {"generator": params["gen"].copy(),
                     "eps": params["eps"].copy()}
    if checkpoint_dir:
        save_train_state(checkpoint_dir, layer, params, state, opt.epochs,
                         head_names=_HEAD_NAMES)
    report.wall_clock_sec = time.perf_counter() - t0
    return report


def _eval_angle(params, layer, data, t, m, chunk=2048):
    total = 0.0
    n = data["theta_test"].size
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        pred, _ = _angle_forward(params, layer, data["f_test"][sl],
                                 data["y_test"][sl], t, m)
        diff = pred - data["theta_test"][sl]
        total += float(np.sum(diff * diff))
    return total / n


def _echo(task, opt):
    return {"task": asdict(task), "optimizer": asdict(opt)}
