"""Sparse variational GP multiclass classifier.

The variational distribution is whitened: with Kzz = L L^T, the inducing
outputs are u_c = L v_c and q(v_c) = N(m_c, L_c L_c^T) per class, so the KL
against the N(0, I) prior has a closed form that never touches the kernel.
The expected log-likelihood (softmax over one latent function per class) is
estimated by Monte Carlo with reparameterized draws, and all gradients are
computed analytically, including the Cholesky-backward path into the kernel
hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NonFiniteLoss, TooFewPoints
from .kernel import (
    KernelParams,
    init_kernel_params,
    kernel_diag,
    kernel_matrix,
    rbf_ard_input_grads,
    rbf_ard_param_grads,
)
from .linalg import cholesky_backward, cholesky_with_jitter, solve_lower_triangular

VARIANCE_FLOOR = 1e-12


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    # inverse of log(1 + e^x); y must be positive
    return y + np.log(-np.expm1(-y))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class TrainConfig:
    learning_rate: float = 0.003
    epochs: int = 2
    batch_size: int = 500
    mc_train_samples: int = 8
    mc_predict_samples: int = 64
    seed: int = 0
    optimize_inducing: bool = False
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8

    def validate(self) -> None:
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.mc_train_samples < 1 or self.mc_predict_samples < 1:
            raise ValueError("batch_size and sample counts must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class LatentGaussian:
    """Marginal Gaussian over the latent function values, (N, C) mean/variance."""

    mean: np.ndarray
    variance: np.ndarray


@dataclass
class SvgpModel:
    """Kernel hyperparameters, inducing inputs, and per-class whitened variationals.

    ``variational_scales_raw[c]`` stores L_c with an unconstrained diagonal:
    the strictly-lower triangle is used as-is and the diagonal is passed
    through softplus, keeping it strictly positive under gradient updates.
    """

    kernel: KernelParams
    inducing_inputs: np.ndarray  # (M, D)
    variational_means: np.ndarray  # (C, M)
    variational_scales_raw: np.ndarray  # (C, M, M)
    jitter: float = 1e-6
    num_classes: int = 3

    @property
    def m(self) -> int:
        return self.inducing_inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inducing_inputs.shape[1]

    def scale_lower(self, c: int) -> np.ndarray:
        """Effective L_c: lower triangle with softplus-transformed diagonal."""
        raw = self.variational_scales_raw[c]
        l = np.tril(raw, k=-1)
        l[np.diag_indices_from(l)] = softplus(np.diag(raw))
        return l

    def copy(self) -> "SvgpModel":
        return SvgpModel(
            kernel=self.kernel.copy(),
            inducing_inputs=self.inducing_inputs.copy(),
            variational_means=self.variational_means.copy(),
            variational_scales_raw=self.variational_scales_raw.copy(),
            jitter=self.jitter,
            num_classes=self.num_classes,
        )


@dataclass
class TraceEntry:
    step: int
    objective: float


def init_model(
    train_features: np.ndarray,
    m: int = 300,
    seed: int = 0,
    num_classes: int = 3,
    jitter: float = 1e-6,
) -> SvgpModel:
    """Inducing inputs sampled without replacement; q(v) starts at the prior.

    Kernel lengthscales come from the median-distance heuristic on a
    subsample of the training features; signal variance starts at 1.
    """
    features = np.asarray(train_features, dtype=np.float64)
    n = features.shape[0]
    if m < 1:
        raise ValueError("m must be >= 1")
    if n < m:
        raise TooFewPoints(f"need at least {m} training points, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=m, replace=False)
    z = features[idx].copy()
    kern = init_kernel_params(features, rng)
    means = np.zeros((num_classes, m))
    scales = np.zeros((num_classes, m, m))
    diag_raw = softplus_inv(1.0)
    for c in range(num_classes):
        scales[c][np.diag_indices(m)] = diag_raw
    return SvgpModel(
        kernel=kern,
        inducing_inputs=z,
        variational_means=means,
        variational_scales_raw=scales,
        jitter=jitter,
        num_classes=num_classes,
    )


def _whitened_projection(model: SvgpModel, xs: np.ndarray):
    """Shared forward pieces: chol(Kzz), Kzx, and A = L^{-1} Kzx."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != model.dim:
        raise DimensionMismatch(f"inputs {xs.shape} vs inducing dim {model.dim}")
    z = model.inducing_inputs
    kzz = kernel_matrix(z, z, model.kernel)
    fac = cholesky_with_jitter(kzz, model.jitter)
    kzx = kernel_matrix(z, xs, model.kernel)
    a = solve_lower_triangular(fac, kzx)
    return xs, kzz, fac, kzx, a


def predictive_latent(model: SvgpModel, xs: np.ndarray) -> LatentGaussian:
    """Marginal q(f) at the inputs: mean a^T m_c, variance kxx - a^T a + |L_c^T a|^2."""
    xs, _, _, _, a = _whitened_projection(model, xs)
    n = xs.shape[0]
    c_n = model.num_classes
    mean = a.T @ model.variational_means.T
    base = kernel_diag(xs, model.kernel) - np.sum(a * a, axis=0)
    variance = np.empty((n, c_n))
    for c in range(c_n):
        w = model.scale_lower(c).T @ a
        variance[:, c] = base + np.sum(w * w, axis=0)
    return LatentGaussian(mean=mean, variance=np.maximum(variance, VARIANCE_FLOOR))


def kl_divergence(model: SvgpModel) -> float:
    """KL(q(v) || N(0, I)) summed over classes, in closed form; always >= 0."""
    total = 0.0
    m = model.m
    for c in range(model.num_classes):
        l = model.scale_lower(c)
        mc = model.variational_means[c]
        total += 0.5 * (
            np.sum(l * l) + np.dot(mc, mc) - m - 2.0 * np.sum(np.log(np.diag(l)))
        )
    # closed form is >= 0 analytically; guard cancellation at the optimum
    return max(float(total), 0.0)


def _log_softmax_stats(f: np.ndarray, labels: np.ndarray):
    """Per-draw log softmax at the true class, plus softmax probabilities.

    ``f`` has shape (B, C, S); returns (logp (B, S), probs (B, C, S)).
    """
    mx = f.max(axis=1, keepdims=True)
    ex = np.exp(f - mx)
    denom = ex.sum(axis=1, keepdims=True)
    lse = (mx + np.log(denom))[:, 0, :]
    logp = f[np.arange(f.shape[0]), labels, :] - lse
    return logp, ex / denom


def elbo_minibatch(
    model: SvgpModel,
    features: np.ndarray,
    labels: np.ndarray,
    n_total: int,
    noise: np.ndarray,
) -> float:
    """Monte-Carlo minibatch ELBO with externally supplied standard-normal draws.

    ``noise`` must have shape (batch, num_classes, samples); the likelihood
    term is scaled by n_total / batch and the exact KL is subtracted.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    b = features.shape[0]
    if b == 0:
        raise DimensionMismatch("empty batch")
    if noise.shape[:2] != (b, model.num_classes) or noise.ndim != 3:
        raise DimensionMismatch(
            f"noise shape {noise.shape}, expected ({b}, {model.num_classes}, S)"
        )
    lat = predictive_latent(model, features)
    f = lat.mean[:, :, None] + np.sqrt(lat.variance)[:, :, None] * noise
    logp, _ = _log_softmax_stats(f, labels)
    scale = n_total / b
    return float(scale * np.sum(logp.mean(axis=1)) - kl_divergence(model))


def _elbo_and_grads(
    model: SvgpModel,
    features: np.ndarray,
    labels: np.ndarray,
    n_total: int,
    noise: np.ndarray,
    optimize_inducing: bool = False,
):
    """ELBO value plus analytic gradients for every trainable parameter block."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    b = features.shape[0]
    c_n = model.num_classes
    s = noise.shape[2]
    xs, kzz, fac, kzx, a = _whitened_projection(model, features)
    l_kern = fac.lower

    scales = [model.scale_lower(c) for c in range(c_n)]
    w_all = [scales[c].T @ a for c in range(c_n)]

    kdiag = kernel_diag(xs, model.kernel)
    base = kdiag - np.sum(a * a, axis=0)
    var_raw = np.stack([base + np.sum(w * w, axis=0) for w in w_all], axis=1)
    clamp = var_raw > VARIANCE_FLOOR
    var = np.maximum(var_raw, VARIANCE_FLOOR)
    sigma = np.sqrt(var)
    mean = a.T @ model.variational_means.T

    f = mean[:, :, None] + sigma[:, :, None] * noise
    logp, probs = _log_softmax_stats(f, labels)
    scale = n_total / b
    elbo = scale * np.sum(logp.mean(axis=1)) - kl_divergence(model)

    # d(scaled log-lik)/df
    dlf = -probs
    dlf[np.arange(b), labels, :] += 1.0
    dlf *= scale / s
    g_mean = dlf.sum(axis=2)  # (B, C)
    g_sigma = (dlf * noise).sum(axis=2)  # (B, C)
    dvar = np.where(clamp, g_sigma / (2.0 * sigma), 0.0)

    # variational means: mean[n, c] = sum_j A[j, n] m[c, j]
    dmeans = (a @ g_mean).T - model.variational_means  # KL term: -m_c

    da = model.variational_means.T @ g_mean.T  # (M, B), mean path
    col_dvar = dvar.sum(axis=1)
    da -= 2.0 * a * col_dvar[None, :]

    dscales_raw = np.zeros_like(model.variational_scales_raw)
    for c in range(c_n):
        dw = 2.0 * w_all[c] * dvar[:, c][None, :]
        dl_c = a @ dw.T
        da += scales[c] @ dw
        # KL term: d(-KL)/dL_c = -(L_c - diag(1/L_cii))
        dl_c -= scales[c]
        dl_c[np.diag_indices_from(dl_c)] += 1.0 / np.diag(scales[c])
        dl_c = np.tril(dl_c)
        raw_diag = np.diag(model.variational_scales_raw[c])
        dl_c[np.diag_indices_from(dl_c)] *= _sigmoid(raw_diag)
        dscales_raw[c] = dl_c

    # kernel paths: kdiag, Kzx (through the solve), Kzz (through the factor)
    kzx_bar = solve_triangular(l_kern, da, lower=True, trans="T")
    l_bar = np.tril(-(kzx_bar @ a.T))
    kzz_bar = cholesky_backward(l_kern, l_bar)

    sig2 = np.exp(model.kernel.log_variance)
    d_log_var = float(np.sum(col_dvar) * sig2)
    dlv1, dll1 = rbf_ard_param_grads(model.inducing_inputs, xs, model.kernel, kzx_bar, kzx)
    dlv2, dll2 = rbf_ard_param_grads(
        model.inducing_inputs, model.inducing_inputs, model.kernel, kzz_bar, kzz
    )
    d_log_var += dlv1 + dlv2
    d_log_ls = dll1 + dll2

    grads = {
        "variational_means": dmeans,
        "variational_scales_raw": dscales_raw,
        "log_variance": np.array(d_log_var),
        "log_lengthscales": d_log_ls,
    }
    if optimize_inducing:
        dz = rbf_ard_input_grads(model.inducing_inputs, xs, model.kernel, kzx_bar, kzx)
        dz += 2.0 * rbf_ard_input_grads(
            model.inducing_inputs, model.inducing_inputs, model.kernel, kzz_bar, kzz
        )
        grads["inducing_inputs"] = dz
    return float(elbo), grads


def _epoch_noise(seed: int, epoch: int, n: int, num_classes: int, samples: int) -> np.ndarray:
    """Counter-based normal draws: noise[i, c, s] depends only on
    (seed, epoch, example index, class, sample), never on batch order."""
    key = np.array([np.uint64(seed % 2**64), np.uint64(epoch)], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((n, num_classes, samples))


def fit(
    model: SvgpModel,
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
) -> tuple[SvgpModel, list[TraceEntry]]:
    """RMSProp ascent on the minibatch ELBO; returns a new model and the trace.

    Deterministic for a fixed (data, config, seed): epoch shuffling comes from
    cfg.seed and per-example MC noise from a counter-based generator keyed by
    (seed, epoch). The input model is not modified.
    """
    cfg.validate()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n == 0:
        raise DimensionMismatch("empty training set")

    out = model.copy()
    caches: dict[str, np.ndarray] = {
        "variational_means": np.zeros_like(out.variational_means),
        "variational_scales_raw": np.zeros_like(out.variational_scales_raw),
        "log_variance": np.zeros(()),
        "log_lengthscales": np.zeros_like(out.kernel.log_lengthscales),
    }
    if cfg.optimize_inducing:
        caches["inducing_inputs"] = np.zeros_like(out.inducing_inputs)

    shuffle_rng = np.random.default_rng(cfg.seed)
    trace: list[TraceEntry] = []
    step = 0
    decay, eps, lr = cfg.rmsprop_decay, cfg.rmsprop_epsilon, cfg.learning_rate
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        noise = _epoch_noise(cfg.seed, epoch, n, out.num_classes, cfg.mc_train_samples)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            elbo, grads = _elbo_and_grads(
                out, features[idx], labels[idx], n, noise[idx], cfg.optimize_inducing
            )
            if not np.isfinite(elbo):
                raise NonFiniteLoss(step, elbo)
            for name, g in grads.items():
                caches[name] = decay * caches[name] + (1.0 - decay) * g * g
                update = lr * g / (np.sqrt(caches[name]) + eps)
                if name == "log_variance":
                    out.kernel.log_variance += float(update)
                elif name == "log_lengthscales":
                    out.kernel.log_lengthscales += update
                elif name == "inducing_inputs":
                    out.inducing_inputs += update
                elif name == "variational_means":
                    out.variational_means += update
                else:
                    out.variational_scales_raw += update
            trace.append(TraceEntry(step=step, objective=elbo))
            step += 1
    return out, trace


def predict_proba(model: SvgpModel, xs: np.ndarray, s: int = 64, seed: int = 0) -> np.ndarray:
    """Class probabilities as the MC average of softmax over latent draws.

    Rows sum to 1 up to float round-off; deterministic for a fixed seed.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    lat = predictive_latent(model, xs)
    n, c_n = lat.mean.shape
    key = np.array([np.uint64(seed % 2**64), np.uint64(0)], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    noise = gen.standard_normal((n, c_n, s))
    f = lat.mean[:, :, None] + np.sqrt(lat.variance)[:, :, None] * noise
    mx = f.max(axis=1, keepdims=True)
    ex = np.exp(f - mx)
    probs = ex / ex.sum(axis=1, keepdims=True)
    return probs.mean(axis=2)
