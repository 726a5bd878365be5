"""Deep-ensemble baseline: MLP members with batch norm, Adam, and FGSM
adversarial training; the ensemble prediction is the mean member softmax.

Forward/backward passes are written out explicitly (no autodiff), including
the batch-norm backward through the batch statistics, so training gradients
can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmall, DimensionMismatch, NonFiniteLoss

N_HIDDEN_BLOCKS = 3


@dataclass
class EnsembleConfig:
    members: int = 5
    hidden_units: int = 200
    num_classes: int = 3
    learning_rate: float = 3e-3
    epochs: int = 10
    batch_size: int = 500
    fgsm_epsilon: float = 0.01
    adv_weight: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    bn_momentum: float = 0.9
    bn_epsilon: float = 1e-5
    seed: int = 0

    def validate(self) -> None:
        if self.members < 1:
            raise ValueError("members must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        if not 0.0 <= self.adv_weight <= 1.0:
            raise ValueError("adv_weight must be in [0, 1]")
        if self.fgsm_epsilon < 0.0:
            raise ValueError("fgsm_epsilon must be >= 0")


@dataclass
class MlpParams:
    """Three linear+batchnorm+ReLU blocks and an output linear layer."""

    weights: list  # 4 arrays: (D,H), (H,H), (H,H), (H,C)
    biases: list  # 4 arrays
    bn_scale: list  # 3 arrays of length H (gamma)
    bn_shift: list  # 3 arrays of length H (beta)
    bn_running_mean: list  # 3 arrays of length H
    bn_running_var: list  # 3 arrays of length H
    bn_epsilon: float = 1e-5

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def trainable(self) -> dict[str, np.ndarray]:
        out = {}
        for i in range(N_HIDDEN_BLOCKS + 1):
            out[f"w{i}"] = self.weights[i]
            out[f"b{i}"] = self.biases[i]
        for i in range(N_HIDDEN_BLOCKS):
            out[f"gamma{i}"] = self.bn_scale[i]
            out[f"beta{i}"] = self.bn_shift[i]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            bn_scale=[g.copy() for g in self.bn_scale],
            bn_shift=[b.copy() for b in self.bn_shift],
            bn_running_mean=[m.copy() for m in self.bn_running_mean],
            bn_running_var=[v.copy() for v in self.bn_running_var],
            bn_epsilon=self.bn_epsilon,
        )


@dataclass
class EnsembleModel:
    members: list  # of MlpParams
    fgsm_epsilon: float
    feature_scale: np.ndarray  # per-dimension std of the training features


def init_mlp(
    dim: int, rng: np.random.Generator, hidden: int = 200, num_classes: int = 3,
    bn_epsilon: float = 1e-5,
) -> MlpParams:
    """He-uniform weights, zero biases, identity batch-norm state."""
    sizes = [dim] + [hidden] * N_HIDDEN_BLOCKS + [num_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(
        weights=weights,
        biases=biases,
        bn_scale=[np.ones(hidden) for _ in range(N_HIDDEN_BLOCKS)],
        bn_shift=[np.zeros(hidden) for _ in range(N_HIDDEN_BLOCKS)],
        bn_running_mean=[np.zeros(hidden) for _ in range(N_HIDDEN_BLOCKS)],
        bn_running_var=[np.ones(hidden) for _ in range(N_HIDDEN_BLOCKS)],
        bn_epsilon=bn_epsilon,
    )


def _forward_cached(p: MlpParams, xs: np.ndarray, stats: list | None):
    """Forward pass keeping intermediates.

    ``stats`` is a list of (mean, var) per block for frozen-statistics mode,
    or None to compute batch statistics (training mode).
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != p.dim:
        raise DimensionMismatch(f"inputs {xs.shape} vs network input dim {p.dim}")
    h = xs
    cache = {"x": xs, "blocks": []}
    for i in range(N_HIDDEN_BLOCKS):
        z = h @ p.weights[i] + p.biases[i]
        if stats is None:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            from_batch = True
        else:
            mu, var = stats[i]
            from_batch = False
        inv_std = 1.0 / np.sqrt(var + p.bn_epsilon)
        xhat = (z - mu) * inv_std
        bn = p.bn_scale[i] * xhat + p.bn_shift[i]
        out = np.maximum(bn, 0.0)
        cache["blocks"].append(
            {"h_in": h, "z": z, "mu": mu, "var": var, "inv_std": inv_std,
             "xhat": xhat, "mask": bn > 0.0, "from_batch": from_batch}
        )
        h = out
    logits = h @ p.weights[-1] + p.biases[-1]
    cache["h_last"] = h
    return logits, cache


def mlp_forward(p: MlpParams, xs: np.ndarray, mode: str) -> np.ndarray:
    """Logits for a batch; 'train' uses batch statistics, 'eval' running ones."""
    xs = np.asarray(xs, dtype=np.float64)
    if mode == "train":
        if xs.shape[0] < 2:
            raise BatchTooSmall("train mode needs a batch of at least 2")
        logits, _ = _forward_cached(p, xs, None)
    elif mode == "eval":
        stats = list(zip(p.bn_running_mean, p.bn_running_var))
        logits, _ = _forward_cached(p, xs, stats)
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    mx = logits.max(axis=-1, keepdims=True)
    ex = np.exp(logits - mx)
    return ex / ex.sum(axis=-1, keepdims=True)


def _ce_loss_and_dlogits(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy and its gradient wrt the logits."""
    b = logits.shape[0]
    mx = logits.max(axis=1, keepdims=True)
    lse = (mx + np.log(np.exp(logits - mx).sum(axis=1, keepdims=True)))[:, 0]
    loss = float(np.mean(lse - logits[np.arange(b), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b


def _backward(p: MlpParams, cache: dict, dlogits: np.ndarray):
    """Gradients of the cached forward pass; batch-stat blocks get the full
    batch-norm backward, frozen-stat blocks treat mean/var as constants."""
    grads: dict[str, np.ndarray] = {}
    h_last = cache["h_last"]
    grads[f"w{N_HIDDEN_BLOCKS}"] = h_last.T @ dlogits
    grads[f"b{N_HIDDEN_BLOCKS}"] = dlogits.sum(axis=0)
    dh = dlogits @ p.weights[-1].T
    for i in range(N_HIDDEN_BLOCKS - 1, -1, -1):
        blk = cache["blocks"][i]
        dbn = dh * blk["mask"]
        grads[f"gamma{i}"] = (dbn * blk["xhat"]).sum(axis=0)
        grads[f"beta{i}"] = dbn.sum(axis=0)
        dxhat = dbn * p.bn_scale[i]
        if blk["from_batch"]:
            b = dxhat.shape[0]
            zc = blk["z"] - blk["mu"]
            dvar = np.sum(dxhat * zc, axis=0) * (-0.5) * blk["inv_std"] ** 3
            dmu = -np.sum(dxhat, axis=0) * blk["inv_std"] + dvar * np.mean(-2.0 * zc, axis=0)
            dz = dxhat * blk["inv_std"] + dvar * 2.0 * zc / b + dmu / b
        else:
            dz = dxhat * blk["inv_std"]
        grads[f"w{i}"] = blk["h_in"].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ p.weights[i].T
    return grads, dh  # dh is now the gradient wrt the network input


def loss_and_grads(p: MlpParams, xs: np.ndarray, labels: np.ndarray, mode: str):
    """Cross-entropy loss plus parameter gradients (used by tests and fitting)."""
    if mode == "train":
        if np.asarray(xs).shape[0] < 2:
            raise BatchTooSmall("train mode needs a batch of at least 2")
        logits, cache = _forward_cached(p, xs, None)
    elif mode == "eval":
        stats = list(zip(p.bn_running_mean, p.bn_running_var))
        logits, cache = _forward_cached(p, xs, stats)
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    loss, dlogits = _ce_loss_and_dlogits(logits, np.asarray(labels))
    grads, dx = _backward(p, cache, dlogits)
    return loss, grads, dx


def _input_gradient(p: MlpParams, xs: np.ndarray, labels: np.ndarray, stats: list):
    """Gradient of the mean CE wrt the inputs, with frozen normalization stats."""
    logits, cache = _forward_cached(p, xs, stats)
    _, dlogits = _ce_loss_and_dlogits(logits, np.asarray(labels))
    _, dx = _backward(p, cache, dlogits)
    return dx


def fgsm_perturb(
    p: MlpParams,
    x: np.ndarray,
    y: int,
    eps: float,
    feature_scale: np.ndarray | None = None,
) -> np.ndarray:
    """One-step sign ascent on the input: x + eps * scale * sign(dCE/dx).

    Normalization statistics are frozen (running stats), so the gradient is a
    plain chain rule through the network. Zero-gradient coordinates stay put.
    """
    if eps < 0.0:
        raise ValueError("eps must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if feature_scale is None:
        feature_scale = np.ones_like(x)
    if eps == 0.0:
        return x.copy()
    stats = list(zip(p.bn_running_mean, p.bn_running_var))
    dx = _input_gradient(p, x[None, :], np.array([y]), stats)[0]
    return x + eps * feature_scale * np.sign(dx)


def feature_scale_of(features: np.ndarray) -> np.ndarray:
    """Per-dimension standard deviation, floored away from zero."""
    return np.maximum(np.asarray(features, dtype=np.float64).std(axis=0), 1e-8)


@dataclass
class MemberTrace:
    step: int
    objective: float


def fit_member(
    features: np.ndarray,
    labels: np.ndarray,
    cfg: EnsembleConfig,
    seed: int,
    feature_scale: np.ndarray | None = None,
) -> tuple[MlpParams, list[MemberTrace]]:
    """Train one member: Adam on 1/2 clean CE + 1/2 CE on FGSM-perturbed inputs.

    Adversarial examples are built with the clean batch's normalization
    statistics frozen; running stats are updated from the clean pass only.
    Deterministic for fixed (data, config, seed).
    """
    cfg.validate()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n, d = features.shape
    if n == 0:
        raise DimensionMismatch("empty training set")
    if feature_scale is None:
        feature_scale = feature_scale_of(features)

    rng = np.random.default_rng(seed)
    p = init_mlp(d, rng, hidden=cfg.hidden_units, num_classes=cfg.num_classes,
                 bn_epsilon=cfg.bn_epsilon)

    m_state = {k: np.zeros_like(v) for k, v in p.trainable().items()}
    v_state = {k: np.zeros_like(v) for k, v in p.trainable().items()}
    b1, b2, eps_a, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate
    mom = cfg.bn_momentum
    trace: list[MemberTrace] = []
    step = 0
    t = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            if idx.size < 2:
                continue  # batch norm cannot normalize a single example
            xb, yb = features[idx], labels[idx]

            logits, cache = _forward_cached(p, xb, None)
            loss_clean, dlogits = _ce_loss_and_dlogits(logits, yb)
            grads_clean, _ = _backward(p, cache, dlogits)
            batch_stats = [(blk["mu"], blk["var"]) for blk in cache["blocks"]]
            for i in range(N_HIDDEN_BLOCKS):
                p.bn_running_mean[i] = mom * p.bn_running_mean[i] + (1 - mom) * batch_stats[i][0]
                p.bn_running_var[i] = mom * p.bn_running_var[i] + (1 - mom) * batch_stats[i][1]

            dxb = _input_gradient(p, xb, yb, batch_stats)
            x_adv = xb + cfg.fgsm_epsilon * feature_scale * np.sign(dxb)
            logits_a, cache_a = _forward_cached(p, x_adv, None)
            loss_adv, dlogits_a = _ce_loss_and_dlogits(logits_a, yb)
            grads_adv, _ = _backward(p, cache_a, dlogits_a)

            w = cfg.adv_weight
            loss = (1 - w) * loss_clean + w * loss_adv
            if not np.isfinite(loss):
                raise NonFiniteLoss(step, loss)

            t += 1
            params = p.trainable()
            for k, arr in params.items():
                g = (1 - w) * grads_clean[k] + w * grads_adv[k]
                m_state[k] = b1 * m_state[k] + (1 - b1) * g
                v_state[k] = b2 * v_state[k] + (1 - b2) * g * g
                mhat = m_state[k] / (1 - b1**t)
                vhat = v_state[k] / (1 - b2**t)
                arr -= lr * mhat / (np.sqrt(vhat) + eps_a)
            trace.append(MemberTrace(step=step, objective=loss))
            step += 1
    return p, trace


def fit_ensemble(
    features: np.ndarray, labels: np.ndarray, cfg: EnsembleConfig
) -> tuple[EnsembleModel, list[list[MemberTrace]]]:
    """Train cfg.members independent networks with seeds cfg.seed + index."""
    cfg.validate()
    scale = feature_scale_of(features)
    members, traces = [], []
    for i in range(cfg.members):
        p, tr = fit_member(features, labels, cfg, seed=cfg.seed + i, feature_scale=scale)
        members.append(p)
        traces.append(tr)
    return EnsembleModel(members=members, fgsm_epsilon=cfg.fgsm_epsilon,
                         feature_scale=scale), traces


def ensemble_predict(m: EnsembleModel, xs: np.ndarray) -> np.ndarray:
    """Mean of member softmax outputs in eval mode; rows sum to 1."""
    if not m.members:
        raise ValueError("ensemble has no members")
    acc = None
    for member in m.members:
        probs = softmax(mlp_forward(member, xs, "eval"))
        acc = probs if acc is None else acc + probs
    return acc / len(m.members)
