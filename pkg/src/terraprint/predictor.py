"""Learned disturbance predictor: a small feedforward net, its trainer, and
sequentially thresholded least squares (STLSQ) for sensor-channel selection.

The net maps fused features to the 6-DOF disturbance expected over the next
0.5 s. Inputs are standardized with training-set statistics; masked features
are forced to zero after standardization, so they cannot influence the
output. Training runs on standardized targets and the target scaling is
folded into the output layer afterwards, so :meth:`PredictorNet.forward`
returns physical units.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from terraprint.core import DisturbanceVec

HIDDEN = (128, 64)
N_OUT = 6
TARGET_NAMES = ("d_x", "d_y", "d_z", "d_rx", "d_ry", "d_rz")


class IllConditionedError(np.linalg.LinAlgError):
    pass


def _act(x, kind):
    return np.maximum(x, 0.0) if kind == "relu" else np.tanh(x)


def _act_grad(a, kind):
    """Derivative expressed through the activation output ``a``."""
    return (a > 0.0).astype(float) if kind == "relu" else 1.0 - a * a


@dataclass
class PredictorNet:
    layers: list  # [(W, b)], W has shape (out, in)
    activation: str = "relu"
    feature_mask: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    layout: tuple = ()

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ValueError("activation must be relu or tanh")
        d = self.input_dim
        prev = d
        for W, b in self.layers:
            if W.shape[1] != prev or b.shape != (W.shape[0],):
                raise ValueError("inconsistent layer shapes")
            prev = W.shape[0]
        if prev != N_OUT:
            raise ValueError(f"output layer must have {N_OUT} units")
        if self.feature_mask is None:
            self.feature_mask = np.ones(d, dtype=bool)
        if self.mean is None:
            self.mean = np.zeros(d)
        if self.std is None:
            self.std = np.ones(d)
        self.feature_mask = np.asarray(self.feature_mask, dtype=bool)
        if self.feature_mask.shape != (d,) or np.shape(self.mean) != (d,) or np.shape(self.std) != (d,):
            raise ValueError("mask and standardization must match the input dimension")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @classmethod
    def initialize(cls, d: int, seed: int = 0, activation: str = "relu", hidden=HIDDEN, **kw) -> "PredictorNet":
        rng = np.random.default_rng(seed)
        sizes = (d, *hidden, N_OUT)
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = 2.0 if (activation == "relu" and i < len(sizes) - 2) else 1.0
            W = rng.normal(0.0, np.sqrt(gain / n_in), (n_out, n_in))
            layers.append((W, np.zeros(n_out)))
        return cls(layers, activation, **kw)

    def copy(self) -> "PredictorNet":
        return PredictorNet([(W.copy(), b.copy()) for W, b in self.layers], self.activation,
                            self.feature_mask.copy(), self.mean.copy(), self.std.copy(), tuple(self.layout))

    def standardize(self, Z: np.ndarray) -> np.ndarray:
        Zs = (Z - self.mean) / self.std
        return np.where(self.feature_mask, Zs, 0.0)

    def forward_batch(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.ndim != 2 or Z.shape[1] != self.input_dim:
            raise ValueError(f"expected features of dimension {self.input_dim}, got shape {Z.shape}")
        a = self.standardize(Z)
        for W, b in self.layers[:-1]:
            a = _act(a @ W.T + b, self.activation)
        W, b = self.layers[-1]
        return a @ W.T + b

    def forward(self, z) -> DisturbanceVec:
        z = np.asarray(z, dtype=float)
        if z.ndim != 1:
            raise ValueError("forward expects a single feature vector")
        return DisturbanceVec.from_array(self.forward_batch(z[None, :])[0])

    def to_json(self) -> dict:
        return {
            "layout": list(self.layout),
            "activation": self.activation,
            "mask": [bool(m) for m in self.feature_mask],
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "layers": [{"w": W.tolist(), "b": b.tolist()} for W, b in self.layers],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PredictorNet":
        layers = [(np.array(l["w"], dtype=float), np.array(l["b"], dtype=float)) for l in obj["layers"]]
        st = obj["standardization"]
        return cls(layers, obj.get("activation", "relu"), np.array(obj["mask"], dtype=bool),
                   np.array(st["mean"], dtype=float), np.array(st["std"], dtype=float), tuple(obj.get("layout", ())))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "PredictorNet":
        return cls.from_json(json.loads(Path(path).read_text()))


# -- loss and backprop ------------------------------------------------------

def loss_and_grads(net: PredictorNet, Z: np.ndarray, Y: np.ndarray, scale: float = 1.0):
    """Mean squared error ``scale * mean_i 0.5*|y_i - t_i|^2`` and its parameter gradients."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Z.shape[0]
    acts = [net.standardize(Z)]
    for W, b in net.layers[:-1]:
        acts.append(_act(acts[-1] @ W.T + b, net.activation))
    W, b = net.layers[-1]
    out = acts[-1] @ W.T + b
    r = out - Y
    loss = scale * 0.5 * float(np.sum(r * r)) / n
    delta = scale * r / n
    grads = []
    for i in range(len(net.layers) - 1, -1, -1):
        W, _ = net.layers[i]
        grads.append((delta.T @ acts[i], delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W) * _act_grad(acts[i], net.activation)
    grads.reverse()
    return loss, grads


def numerical_gradient_check(net: PredictorNet, z, target=None, h: float = 1e-5,
                             floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a| + |n|, floor)``; the floor keeps
    parameters with vanishing gradient from dividing roundoff by zero.
    """
    Z = np.atleast_2d(np.asarray(z, dtype=float))
    Y = np.zeros((Z.shape[0], N_OUT)) if target is None else np.atleast_2d(np.asarray(target, dtype=float))
    _, grads = loss_and_grads(net, Z, Y)
    probe = net.copy()
    worst = 0.0
    for li, (W, b) in enumerate(probe.layers):
        for arr, g in ((W, grads[li][0]), (b, grads[li][1])):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                keep = flat[j]
                flat[j] = keep + h
                lp, _ = _loss_only(probe, Z, Y)
                flat[j] = keep - h
                lm, _ = _loss_only(probe, Z, Y)
                flat[j] = keep
                num = (lp - lm) / (2.0 * h)
                rel = abs(gflat[j] - num) / max(abs(gflat[j]) + abs(num), floor)
                worst = max(worst, rel)
    return worst


def _loss_only(net, Z, Y):
    r = net.forward_batch(Z) - Y
    return 0.5 * float(np.sum(r * r)) / Z.shape[0], r


# -- data -------------------------------------------------------------------

@dataclass
class TrajectoryRecord:
    traj_id: int
    t: np.ndarray
    features: np.ndarray  # (n, d)
    targets: np.ndarray  # (n, 6), disturbance expected 0.5 s ahead

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if not (self.t.shape[0] == self.features.shape[0] == self.targets.shape[0]):
            raise ValueError("t, features and targets must have the same length")


@dataclass
class TrajectoryDataset:
    trajectories: list
    layout: tuple = ()
    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)

    @property
    def ids(self) -> list:
        return [tr.traj_id for tr in self.trajectories]

    def split(self, seed: int = 0, train_fraction: float = 0.8) -> "TrajectoryDataset":
        """Trajectory-level split; at least one trajectory on each side when possible."""
        ids = self.ids
        order = np.random.default_rng(seed).permutation(len(ids))
        n_train = int(round(train_fraction * len(ids)))
        if len(ids) >= 2:
            n_train = min(max(n_train, 1), len(ids) - 1)
        self.train_ids = sorted(ids[i] for i in order[:n_train])
        self.val_ids = sorted(ids[i] for i in order[n_train:])
        self.validate_split()
        return self

    def validate_split(self) -> None:
        if set(self.train_ids) & set(self.val_ids):
            raise ValueError("a trajectory appears in both train and validation splits")

    def stacked(self, ids) -> tuple[np.ndarray, np.ndarray]:
        ids = set(ids)
        rows = [tr for tr in self.trajectories if tr.traj_id in ids]
        if not rows:
            d = len(self.layout)
            return np.zeros((0, d)), np.zeros((0, N_OUT))
        return (np.concatenate([tr.features for tr in rows]), np.concatenate([tr.targets for tr in rows]))

    def to_csv_dir(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for tr in self.trajectories:
            with open(directory / f"traj_{tr.traj_id:04d}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", *self.layout, *TARGET_NAMES])
                for i in range(tr.t.shape[0]):
                    w.writerow([repr(float(tr.t[i])), *map(repr, map(float, tr.features[i])),
                                *map(repr, map(float, tr.targets[i]))])

    @classmethod
    def from_csv_dir(cls, directory) -> "TrajectoryDataset":
        directory = Path(directory)
        files = sorted(p for p in directory.iterdir() if p.name.startswith("traj_") and p.suffix == ".csv")
        trajs, layout = [], ()
        for p in files:
            with open(p, newline="") as fh:
                rows = list(csv.reader(fh))
            header = rows[0]
            layout = tuple(header[1 : len(header) - N_OUT])
            data = np.array(rows[1:], dtype=float).reshape(-1, len(header))
            trajs.append(TrajectoryRecord(int(p.stem.split("_")[1]), data[:, 0], data[:, 1:-N_OUT], data[:, -N_OUT:]))
        return cls(trajs, layout)


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    net: PredictorNet
    initial: PredictorNet
    train_loss: list
    val_loss: list


def _safe_std(X: np.ndarray) -> np.ndarray:
    s = X.std(axis=0)
    return np.where(s > 1e-12, s, 1.0)


def train(data: TrajectoryDataset, hyper: dict, mask=None) -> TrainResult:
    """Mini-batch gradient descent with momentum on standardized targets.

    ``hyper`` keys: lr, epochs, batch, seed; optional momentum (0.9),
    activation (relu), weight_decay (0). Loss curves hold the standardized
    MSE before training and after every epoch.
    """
    data.validate_split()
    if len(data.trajectories) < 2:
        raise ValueError("training needs at least 2 trajectories")
    Xtr, Ytr = data.stacked(data.train_ids)
    Xva, Yva = data.stacked(data.val_ids)
    if Xtr.shape[0] == 0 or Xva.shape[0] == 0:
        raise ValueError("empty train or validation split")
    lr = float(hyper.get("lr", 1e-3))
    epochs = int(hyper.get("epochs", 20))
    batch = int(hyper.get("batch", 64))
    seed = int(hyper.get("seed", 0))
    mom = float(hyper.get("momentum", 0.9))
    decay = float(hyper.get("weight_decay", 0.0))
    activation = hyper.get("activation", "relu")

    d = Xtr.shape[1]
    fmask = np.ones(d, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    t_mean = Ytr.mean(axis=0)
    t_std = _safe_std(Ytr)
    net = PredictorNet.initialize(d, seed, activation, feature_mask=fmask, mean=Xtr.mean(axis=0),
                                  std=_safe_std(Xtr), layout=tuple(data.layout))
    initial = net.copy()
    Str = (Ytr - t_mean) / t_std
    Sva = (Yva - t_mean) / t_std

    rng = np.random.default_rng(seed + 1)
    vel = [(np.zeros_like(W), np.zeros_like(b)) for W, b in net.layers]
    train_curve = [_loss_only(net, Xtr, Str)[0]]
    val_curve = [_loss_only(net, Xva, Sva)[0]]
    n = Xtr.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            _, grads = loss_and_grads(net, Xtr[idx], Str[idx])
            new_layers, new_vel = [], []
            for (W, b), (gW, gb), (vW, vb) in zip(net.layers, grads, vel):
                vW = mom * vW - lr * (gW + decay * W)
                vb = mom * vb - lr * gb
                new_layers.append((W + vW, b + vb))
                new_vel.append((vW, vb))
            net.layers, vel = new_layers, new_vel
        train_curve.append(_loss_only(net, Xtr, Str)[0])
        val_curve.append(_loss_only(net, Xva, Sva)[0])

    # fold the target scaling into the output layer: y = t_std*(W h + b) + t_mean
    W, b = net.layers[-1]
    net.layers[-1] = (W * t_std[:, None], b * t_std + t_mean)
    W0, b0 = initial.layers[-1]
    initial.layers[-1] = (W0 * t_std[:, None], b0 * t_std + t_mean)
    return TrainResult(net, initial, train_curve, val_curve)


# -- sparse feature selection -----------------------------------------------

def stlsq(X: np.ndarray, Y: np.ndarray, threshold: float, ridge: float = 0.0,
          max_iter: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Sequentially thresholded ridge least squares on standardized data.

    Returns ``(mask, coef)`` with ``coef`` of shape (d, outputs). A feature
    survives while its largest coefficient magnitude across outputs is at
    least ``threshold``.
    """
    if threshold < 0.0:
        raise ValueError("threshold must be >= 0")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    n, d = X.shape
    Xs = (X - X.mean(axis=0))
    sx = X.std(axis=0)
    Xs = np.where(sx > 1e-12, Xs / np.where(sx > 1e-12, sx, 1.0), 0.0)
    sy = Y.std(axis=0)
    Ys = np.where(sy > 1e-12, (Y - Y.mean(axis=0)) / np.where(sy > 1e-12, sy, 1.0), 0.0)

    def fit(cols):
        coef = np.zeros((d, Ys.shape[1]))
        if not np.any(cols):
            return coef
        A = Xs[:, cols]
        M = A.T @ A / n + ridge * np.eye(A.shape[1])
        if ridge == 0.0 and np.linalg.cond(M) > 1e12:
            raise IllConditionedError("design matrix is singular; use ridge > 0")
        coef[cols] = np.linalg.solve(M, A.T @ Ys / n)
        return coef

    mask = np.ones(d, dtype=bool)
    coef = fit(mask)
    for _ in range(max_iter):
        keep = mask & (np.max(np.abs(coef), axis=1) >= threshold)
        if np.array_equal(keep, mask):
            break
        mask = keep
        coef = fit(mask)
    coef[~mask] = 0.0
    return mask, coef


def select_features(data: TrajectoryDataset, threshold: float, ridge: float = 0.0) -> np.ndarray:
    """Feature mask from STLSQ on the training split (all data if no split)."""
    ids = data.train_ids or data.ids
    X, Y = data.stacked(ids)
    mask, _ = stlsq(X, Y, threshold, ridge)
    return mask


def load_predictor(source, **kw):
    """Resolve a predictor source: ``"zero"`` gives ``None``, otherwise a JSON path."""
    if source in (None, "zero"):
        return None
    if isinstance(source, PredictorNet):
        return source
    if not os.path.exists(source):
        raise FileNotFoundError(f"predictor file {source!r} not found")
    return PredictorNet.load(source)
