"""Linear models, first-order optimizers and the training loop."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .evaluation import empirical_defer_loss, route_batch
from .bayes import conditional_risks_array, exact_regret_array
from .prng import Stream
from .surrogates import SPLIT_KINDS, DecScores, SurrogateConfig, batch_loss_grad

LAYOUTS = ("Augmented", "Split")
OPTIMIZERS = ("SGD", "SGDMomentum", "AdamW")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite training loss {value!r} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class LinearModel:
    """Scores = W x + b. ``W`` stacks class rows (first K) over expert rows (J).

    The Augmented layout reads the K+J rows as one shared score vector; the
    Split layout reads them as independent class and expert heads.
    """

    layout: str
    K: int
    J: int
    d: int
    W: np.ndarray = None
    b: np.ndarray = None

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        if self.W is None:
            self.W = np.zeros((self.K + self.J, self.d))
        if self.b is None:
            self.b = np.zeros(self.K + self.J)
        self.W = np.asarray(self.W, dtype=np.float64).reshape(self.K + self.J, self.d)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(self.K + self.J)

    @classmethod
    def zeros(cls, kind: str, K: int, J: int, d: int) -> "LinearModel":
        return cls("Split" if kind in SPLIT_KINDS else "Augmented", K, J, d)

    @classmethod
    def uniform_init(cls, kind: str, K: int, J: int, d: int, seed: int) -> "LinearModel":
        """U(-1/sqrt(d), 1/sqrt(d)) weights and biases from a keyed stream."""
        model = cls.zeros(kind, K, J, d)
        bound = 1.0 / np.sqrt(d)
        draws = Stream("deferlab-init", seed).uniform(np.arange(model.n_params))
        model.set_flat(bound * (2.0 * draws - 1.0))
        return model

    @property
    def n_params(self) -> int:
        return self.W.size + self.b.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])

    def set_flat(self, theta: np.ndarray) -> None:
        n = self.W.size
        self.W = theta[:n].reshape(self.W.shape).copy()
        self.b = theta[n:].copy()

    def copy(self) -> "LinearModel":
        return LinearModel(self.layout, self.K, self.J, self.d, self.W.copy(), self.b.copy())

    def to_dict(self) -> dict:
        K = self.K
        out = {"layout": self.layout, "K": self.K, "J": self.J, "d": self.d}
        if self.layout == "Augmented":
            out["weights"] = self.W.ravel().tolist()
            out["bias"] = self.b.tolist()
        else:
            out["class_weights"] = self.W[:K].ravel().tolist()
            out["class_bias"] = self.b[:K].tolist()
            out["expert_weights"] = self.W[K:].ravel().tolist()
            out["expert_bias"] = self.b[K:].tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        if d["layout"] == "Augmented":
            W, b = d["weights"], d["bias"]
        else:
            W = d["class_weights"] + d["expert_weights"]
            b = d["class_bias"] + d["expert_bias"]
        return cls(d["layout"], d["K"], d["J"], d["d"], np.array(W), np.array(b))

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str) -> "LinearModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def forward_batch(model: LinearModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return X @ model.W.T + model.b


def forward(model: LinearModel, x):
    """Scores for one input: a flat K+J vector, or DecScores for the Split layout."""
    a = forward_batch(model, x)[0]
    if model.layout == "Split":
        return DecScores(a[: model.K], a[model.K :])
    return a


def param_grad(model: LinearModel, kind: str, X, y, M, beta: float = 0.5):
    """Mean batch surrogate loss and its gradient w.r.t. the flat parameters."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    scores = forward_batch(model, X)
    loss, G = batch_loss_grad(kind, scores, y, M, model.K, beta)
    n = X.shape[0]
    gW = G.T @ X / n
    gb = G.sum(axis=0) / n
    return float(loss.mean()), np.concatenate([gW.ravel(), gb])


# ---------------------------------------------------------------------------
# optimizers on flat parameter vectors


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return theta - self.lr * grad


class SGDMomentum:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr, self.momentum = lr, momentum
        self.buf = None

    def step(self, theta, grad):
        self.buf = grad.copy() if self.buf is None else self.momentum * self.buf + grad
        return theta - self.lr * self.buf


class AdamW:
    """Adam with decoupled weight decay (decay applied before the moment update)."""

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.t = 0
        self.m = self.v = None

    def step(self, theta, grad):
        b1, b2 = self.betas
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        theta = theta * (1.0 - self.lr * self.weight_decay)
        self.m = b1 * self.m + (1.0 - b1) * grad
        self.v = b2 * self.v + (1.0 - b2) * grad * grad
        mhat = self.m / (1.0 - b1**self.t)
        vhat = self.v / (1.0 - b2**self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    lr: float = 5e-2
    epochs: int = 200
    batch_size: int = 128
    optimizer: str = "AdamW"
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    select_on: str = "true"
    init: str = "zeros"
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    def __post_init__(self):
        if isinstance(self.surrogate, dict):
            self.surrogate = SurrogateConfig(**self.surrogate)
        self.betas = tuple(self.betas)
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.select_on not in ("true", "empirical", "last"):
            raise ValueError("select_on must be 'true', 'empirical' or 'last'")
        if self.init not in ("zeros", "uniform"):
            raise ValueError("init must be 'zeros' or 'uniform'")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    def make_optimizer(self):
        if self.optimizer == "SGD":
            return SGD(self.lr)
        if self.optimizer == "SGDMomentum":
            return SGDMomentum(self.lr, self.momentum)
        return AdamW(self.lr, self.betas, self.eps, self.weight_decay)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_defer_loss: List[float] = field(default_factory=list)
    val_true_defer_loss: List[float] = field(default_factory=list)
    val_regret: List[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_defer_loss,val_true_defer_loss,val_exact_regret,best"]
        rows = zip(self.train_loss, self.val_defer_loss, self.val_true_defer_loss, self.val_regret)
        for e, (a, b, c, r) in enumerate(rows):
            lines.append(f"{e},{a!r},{b!r},{c!r},{r!r},{int(e == self.best_epoch)}")
        return "\n".join(lines) + "\n"


def train(dataset, cfg: TrainConfig, init: Optional[LinearModel] = None):
    """Fit a linear model on ``dataset.train`` and return (model, history).

    The returned parameters are the snapshot of the epoch with the lowest
    validation defer loss (first one on ties). ``cfg.select_on='true'`` scores
    epochs by the analytic defer risk (mean of 1 - eta/alpha of the chosen
    actions); ``'empirical'`` uses realized labels and expert predictions;
    ``'last'`` keeps the final iterate.
    """
    tr, va = dataset.train, dataset.val
    if len(tr) == 0 or len(va) == 0:
        raise ValueError("train and validation splits must be nonempty")
    kind, beta = cfg.surrogate.kind, cfg.surrogate.beta
    K, J, d = dataset.K, dataset.J, tr.X.shape[1]
    if init is not None:
        model = init.copy()
    elif cfg.init == "uniform":
        model = LinearModel.uniform_init(kind, K, J, d, cfg.seed)
    else:
        model = LinearModel.zeros(kind, K, J, d)
    opt = cfg.make_optimizer()
    theta = model.flat()
    shuffle = Stream("deferlab-train", cfg.seed)
    hist = TrainHistory()
    best_theta, best_val = theta.copy(), np.inf
    n = len(tr)
    for epoch in range(cfg.epochs):
        order = shuffle.child(epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    loss, g = param_grad(model, kind, tr.X[idx], tr.y[idx], tr.M[idx], beta)
                except ValueError:  # non-finite logits reached a stable primitive
                    raise TrainingDiverged(epoch, float("nan")) from None
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise TrainingDiverged(epoch, loss)
            total += loss * idx.size
            theta = opt.step(theta, g)
            model.set_flat(theta)
        hist.train_loss.append(total / n)
        defer, index = route_batch(kind, forward_batch(model, va.X), K)
        emp = empirical_defer_loss(defer, index, va.y, va.M)
        true = float(conditional_risks_array(defer, index, va.eta, va.alpha).mean())
        hist.val_defer_loss.append(emp)
        hist.val_true_defer_loss.append(true)
        hist.val_regret.append(exact_regret_array(defer, index, va.eta, va.alpha))
        if cfg.select_on == "last":
            vloss = -float(epoch)
        else:
            vloss = true if cfg.select_on == "true" else emp
        if vloss < best_val:
            best_val, best_theta, hist.best_epoch = vloss, theta.copy(), epoch
    model.set_flat(best_theta)
    return model, hist
