"""Trainable components: the GNN power-allocation initializer, the
parameter store with its unconstrained reparameterization, and the SPSA +
Adam training loop for the unfolded solvers.

Gradients are estimated by simultaneous two-sided random perturbation
(SPSA): two loss evaluations per step regardless of parameter count.
Positivity of the diagonal loadings is guaranteed by training them in log
space; the recursion weights of the two-timescale variant live in logit
space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import (ChannelSet, LosComponents, combined_channel,
                      corrupt_channels, sample_channels)
from .config import SystemConfig

VARIANTS = ("pinet", "pinet-plus", "pinet-imcsi")

CHECKPOINT_VERSION = 1


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# GNN


@dataclass
class GnnParams:
    """Affine maps of the one-update-layer GNN. Total parameter count is
    69 M^2 + 54 M + 2."""

    w_in: np.ndarray    # (6M, 4M+6)
    b_in: np.ndarray    # (6M,)
    w_agg: np.ndarray   # (3M, 6M)
    b_agg: np.ndarray   # (3M,)
    w_com: np.ndarray   # (3M, 9M)
    b_com: np.ndarray   # (3M,)
    w_out: np.ndarray   # (2, 3M)
    b_out: np.ndarray   # (2,)

    _FIELDS = ("w_in", "b_in", "w_agg", "b_agg", "w_com", "b_com", "w_out", "b_out")

    @staticmethod
    def shapes(m: int) -> dict[str, tuple[int, ...]]:
        return {
            "w_in": (6 * m, 4 * m + 6), "b_in": (6 * m,),
            "w_agg": (3 * m, 6 * m), "b_agg": (3 * m,),
            "w_com": (3 * m, 9 * m), "b_com": (3 * m,),
            "w_out": (2, 3 * m), "b_out": (2,),
        }

    @classmethod
    def init(cls, m: int, rng: np.random.Generator) -> "GnnParams":
        vals = {}
        for name, shape in cls.shapes(m).items():
            if name.startswith("w"):
                fan_out, fan_in = shape
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                vals[name] = rng.uniform(-bound, bound, size=shape)
            else:
                vals[name] = np.zeros(shape)
        return cls(**vals)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, f).ravel() for f in self._FIELDS])

    @classmethod
    def from_vector(cls, vec: np.ndarray, m: int) -> "GnnParams":
        vals, pos = {}, 0
        for name, shape in cls.shapes(m).items():
            size = int(np.prod(shape))
            vals[name] = vec[pos:pos + size].reshape(shape).copy()
            pos += size
        if pos != vec.size:
            raise ValueError("GNN vector length mismatch")
        return cls(**vals)

    @property
    def n_params(self) -> int:
        return sum(getattr(self, f).size for f in self._FIELDS)


def gnn_features(channels: ChannelSet, theta: np.ndarray, u: np.ndarray,
                 lam: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Per-user input vectors, shape (K, 4M+6).

    Channels are scaled by sqrt(P_T)/sigma and receive gains by sigma so
    all features sit at O(1) regardless of the path-loss scale; the scaling
    is a fixed function of the config, identical for all users, so
    permutation equivariance is untouched.
    """
    sigma = np.sqrt(float(channels.sigma2[0]))
    cscale = np.sqrt(config.p_t) / sigma
    if channels.h_cascade.shape[1] > 0:
        th_r = np.einsum("n,knm->km", theta.conj(), channels.h_cascade)
    else:
        th_r = np.zeros_like(channels.h_d)
    stacked = np.concatenate([
        channels.h_d * cscale,
        th_r * cscale,
        (u * sigma)[:, None],
        lam.astype(complex)[:, None],
        channels.alpha.astype(complex)[:, None],
    ], axis=1)
    return np.concatenate([stacked.real, stacked.imag], axis=1)


def gnn_forward(gnn: GnnParams, feats: np.ndarray,
                p_t: float) -> tuple[np.ndarray, np.ndarray]:
    """GNN forward pass: per-user power parameters (p, zeta), each summing
    to P_T via a softmax across users."""
    k = feats.shape[0]
    s0 = _relu(feats @ gnn.w_in.T + gnn.b_in)                    # (K, 6M)
    if k < 2:
        a = np.zeros((k, gnn.w_agg.shape[0]))                    # no neighbors
    else:
        pooled = np.empty_like(s0)
        for i in range(k):
            pooled[i] = np.max(np.delete(s0, i, axis=0), axis=0)
        a = _relu(pooled @ gnn.w_agg.T + gnn.b_agg)              # (K, 3M)
    s1 = _relu(np.concatenate([s0, a], axis=1) @ gnn.w_com.T + gnn.b_com)
    out = s1 @ gnn.w_out.T + gnn.b_out                           # (K, 2)
    out = out - out.max(axis=0, keepdims=True)
    soft = np.exp(out) / np.exp(out).sum(axis=0, keepdims=True)
    # keep strictly positive under extreme logits (structured_w needs p > 0)
    soft = np.clip(soft, 1e-12, None)
    soft = soft / soft.sum(axis=0, keepdims=True)
    return soft[:, 0] * p_t, soft[:, 1] * p_t


# ---------------------------------------------------------------------------
# trainable parameter store


@dataclass
class TrainableParams:
    """All trainable scalars and GNN weights, stored in unconstrained
    coordinates (log for gammas, logit for rhos/deltas)."""

    m: int
    i_o: int
    variant: str
    log_gammas: np.ndarray            # (I_O + 1,)
    gnn: GnnParams
    logit_rhos: np.ndarray | None = None    # (I_O,), imperfect-CSI only
    logit_deltas: np.ndarray | None = None  # (I_O,)

    @property
    def gammas(self) -> np.ndarray:
        return np.exp(self.log_gammas)

    @property
    def rhos(self) -> np.ndarray | None:
        return None if self.logit_rhos is None else _sigmoid(self.logit_rhos)

    @property
    def deltas(self) -> np.ndarray | None:
        return None if self.logit_deltas is None else _sigmoid(self.logit_deltas)

    @classmethod
    def init(cls, m: int, i_o: int, variant: str,
             rng: np.random.Generator) -> "TrainableParams":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        two_ts = variant == "pinet-imcsi"
        return cls(
            m=m, i_o=i_o, variant=variant,
            log_gammas=np.zeros(i_o + 1),     # gamma = 1 on the normalized B
            gnn=GnnParams.init(m, rng),
            logit_rhos=np.zeros(i_o) if two_ts else None,
            logit_deltas=np.zeros(i_o) if two_ts else None,
        )

    def to_vector(self) -> np.ndarray:
        parts = [self.log_gammas]
        if self.logit_rhos is not None:
            parts += [self.logit_rhos, self.logit_deltas]
        parts.append(self.gnn.to_vector())
        return np.concatenate(parts)

    def from_vector(self, vec: np.ndarray) -> "TrainableParams":
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {vec.size}")
        pos = self.i_o + 1
        log_gammas = vec[:pos].copy()
        rhos = deltas = None
        if self.logit_rhos is not None:
            rhos = vec[pos:pos + self.i_o].copy()
            pos += self.i_o
            deltas = vec[pos:pos + self.i_o].copy()
            pos += self.i_o
        gnn = GnnParams.from_vector(vec[pos:], self.m)
        return TrainableParams(m=self.m, i_o=self.i_o, variant=self.variant,
                               log_gammas=log_gammas, gnn=gnn,
                               logit_rhos=rhos, logit_deltas=deltas)

    @property
    def n_params(self) -> int:
        n = self.i_o + 1 + self.gnn.n_params
        if self.logit_rhos is not None:
            n += 2 * self.i_o
        return n

    def save(self, path: str) -> None:
        doc = {
            "version": CHECKPOINT_VERSION,
            "m": self.m, "i_o": self.i_o, "variant": self.variant,
            "vector": self.to_vector().tolist(),
        }
        with open(path, "w") as f:
            json.dump(doc, f)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "TrainableParams":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
        proto = cls.init(doc["m"], doc["i_o"], doc["variant"],
                         np.random.default_rng(0))
        vec = np.asarray(doc["vector"], dtype=float)
        return proto.from_vector(vec)


# ---------------------------------------------------------------------------
# loss and gradient estimation


def unrolled_loss(params: TrainableParams, channel_batch, config: SystemConfig,
                  i_o: int | None = None, rng: np.random.Generator | None = None,
                  eta: float = 100.0, varrho: float = 0.0,
                  avg_samples: int = 10, wmmse_sweeps: int = 20) -> float:
    """Mean negative (average) WSR of the unfolded forward pass over a batch.

    Perfect-CSI variants take a batch of ChannelSet; the imperfect-CSI
    variant takes a batch of LosComponents, draws a fresh stream of
    estimated channels per element, and scores the produced theta by its
    average WSR over fresh true channel draws.
    """
    from . import solvers

    if len(channel_batch) == 0:
        raise ValueError("empty batch")
    rng = np.random.default_rng() if rng is None else rng
    i_o = params.i_o if i_o is None else i_o
    total = 0.0
    for idx, item in enumerate(channel_batch):
        if params.variant == "pinet-imcsi":
            stream = (corrupt_channels(sample_channels(item, config, rng), varrho, rng)
                      for _ in range(i_o + 1))
            theta = solvers.wmmse_pinet_imcsi(stream, params, config, i_o=i_o,
                                              rng=rng, training=True, eta=eta)
            val = solvers.avg_wsr(theta, item, config, avg_samples, rng,
                                  wmmse_sweeps=wmmse_sweeps)
        else:
            report = solvers.wmmse_pinet_forward(item, params, config, i_o=i_o,
                                                 mode=params.variant, rng=rng,
                                                 training=True, eta=eta)
            val = report.wsr
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite loss at batch index {idx}")
        total -= val
    return total / len(channel_batch)


def spsa_gradient(vec: np.ndarray, loss_fn, perturb_scale: float,
                  rng: np.random.Generator, n_avg: int = 1) -> np.ndarray:
    """Two-sided simultaneous-perturbation gradient estimate.

    Draws a Rademacher direction over the flattened (unconstrained)
    parameter vector; with entries +-1 the elementwise inverse of the
    direction is the direction itself.
    """
    if perturb_scale <= 0:
        raise ValueError("perturb_scale must be positive")
    grad = np.zeros_like(vec)
    for _ in range(n_avg):
        delta = rng.integers(0, 2, size=vec.size) * 2.0 - 1.0
        lp = loss_fn(vec + perturb_scale * delta)
        lm = loss_fn(vec - perturb_scale * delta)
        grad += (lp - lm) / (2.0 * perturb_scale) * delta
    return grad / n_avg


def spsa_block_gradient(vec, loss_fn, perturb_scale, rng, blocks,
                        n_avg=1):
    """Block-wise SPSA: one two-sided probe per parameter block.

    Perturbing each block in isolation keeps the finite-difference signal
    of small blocks (a handful of per-iteration scalars) from being buried
    under the directional noise of large blocks (thousands of GNN weights).
    Also returns the mean of the probed losses, a free estimate of the loss
    at ``vec``.
    """
    if perturb_scale <= 0:
        raise ValueError("perturb_scale must be positive")
    grad = np.zeros_like(vec)
    loss_sum = 0.0
    n_evals = 0
    for _ in range(n_avg):
        for blk in blocks:
            delta = np.zeros_like(vec)
            delta[blk] = rng.integers(0, 2, size=vec[blk].size) * 2.0 - 1.0
            lp = loss_fn(vec + perturb_scale * delta)
            lm = loss_fn(vec - perturb_scale * delta)
            grad[blk] += (lp - lm) / (2.0 * perturb_scale) * delta[blk]
            loss_sum += 0.5 * (lp + lm)
            n_evals += 1
    return grad / n_avg, loss_sum / n_evals


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainHyper:
    """Trainer hyperparameters; the defaults are documented assumptions.

    Gradients are probed per parameter block (iteration scalars, GNN output
    layer, GNN body) so the low-dimensional step-size signal is not drowned
    by perturbation noise from the thousands of GNN weights; each block has
    its own learning-rate scale.
    """

    epochs: int = 20
    batch_size: int = 50
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    c0: float = 0.1            # SPSA perturbation scale at step 0
    c_exponent: float = 0.101  # c_t = c0 / (t + 1) ** c_exponent
    n_avg: int = 1             # SPSA directions averaged per step and block
    lr_scale_out: float = 0.5  # GNN output-layer learning-rate scale
    lr_scale_body: float = 0.1  # GNN input/update-layer learning-rate scale
    eta: float = 100.0         # soft-quantization sharpness
    varrho: float = 0.0        # NMSE for the imperfect-CSI variant
    avg_samples: int = 10
    holdout: int = 50          # LOS samples held out for model selection
    divergence_factor: float = 10.0


@dataclass
class TrainResult:
    params: TrainableParams
    loss_trace: list[float] = field(default_factory=list)
    holdout_trace: list[float] = field(default_factory=list)
    best_holdout: float = np.inf


def _holdout_loss(params, los_holdout, config, hyper, seed) -> float:
    rng = np.random.default_rng(seed)
    if params.variant == "pinet-imcsi":
        batch = los_holdout
    else:
        batch = [sample_channels(los, config, rng) for los in los_holdout]
    return unrolled_loss(params, batch, config, rng=np.random.default_rng(seed + 1),
                         eta=hyper.eta, varrho=hyper.varrho,
                         avg_samples=hyper.avg_samples)


def train(dataset: list[LosComponents], config: SystemConfig, variant: str,
          hyper: TrainHyper, rng: np.random.Generator,
          i_o: int = 10, init_params: TrainableParams | None = None) -> TrainResult:
    """SPSA + Adam training over a LOS dataset.

    The NLOS fading is redrawn for every batch, per the training protocol.
    Each optimizer step costs 2 * n_avg loss evaluations per parameter
    block. Returns the parameters with the best held-out loss.
    """
    if init_params is None:
        params = TrainableParams.init(config.m, i_o, variant, rng)
    else:
        if init_params.variant != variant or init_params.m != config.m:
            raise ValueError("init_params incompatible with requested training run")
        params = init_params
    n_holdout = min(hyper.holdout, max(0, len(dataset) - hyper.batch_size))
    train_set = dataset[:len(dataset) - n_holdout] if n_holdout else dataset
    holdout_set = dataset[len(dataset) - n_holdout:] if n_holdout else dataset[:1]

    vec = params.to_vector()
    n_scalar = params.n_params - params.gnn.n_params
    n_out = params.gnn.w_out.size + params.gnn.b_out.size
    body_end = params.n_params - n_out
    if variant == "pinet":
        # the GNN is unused by this variant's forward pass; probing it
        # would spend evaluations on an exactly-zero gradient
        blocks = [slice(0, n_scalar)]
    else:
        blocks = [slice(0, n_scalar),
                  slice(body_end, params.n_params),   # GNN output layer
                  slice(n_scalar, body_end)]          # GNN body
    lr_vec = np.full(vec.size, hyper.lr)
    lr_vec[body_end:] = hyper.lr * hyper.lr_scale_out
    lr_vec[n_scalar:body_end] = hyper.lr * hyper.lr_scale_body

    m1 = np.zeros_like(vec)
    m2 = np.zeros_like(vec)
    result = TrainResult(params=params)
    holdout_seed = int(rng.integers(2 ** 31))
    best_vec = vec.copy()
    result.best_holdout = _holdout_loss(params, holdout_set, config, hyper,
                                        holdout_seed)
    result.holdout_trace.append(result.best_holdout)

    steps_per_epoch = max(1, len(train_set) // hyper.batch_size)
    t = 0
    initial_loss = None
    bad_streak = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(len(train_set))
        for s in range(steps_per_epoch):
            idx = order[s * hyper.batch_size:(s + 1) * hyper.batch_size]
            los_batch = [train_set[i] for i in idx]
            step_seed = int(rng.integers(2 ** 31))
            spsa_rng = np.random.default_rng(step_seed + 7)

            def loss_fn(v):
                # common random numbers across the +c / -c evaluations
                local = np.random.default_rng(step_seed)
                p = params.from_vector(v)
                if variant == "pinet-imcsi":
                    batch = los_batch
                else:
                    batch = [sample_channels(los, config, local) for los in los_batch]
                return unrolled_loss(p, batch, config,
                                     rng=np.random.default_rng(step_seed + 1),
                                     eta=hyper.eta, varrho=hyper.varrho,
                                     avg_samples=hyper.avg_samples)

            c_t = hyper.c0 / (t + 1.0) ** hyper.c_exponent
            grad, step_loss = spsa_block_gradient(vec, loss_fn, c_t, spsa_rng,
                                                  blocks, n_avg=hyper.n_avg)
            t += 1
            m1 = hyper.beta1 * m1 + (1.0 - hyper.beta1) * grad
            m2 = hyper.beta2 * m2 + (1.0 - hyper.beta2) * grad ** 2
            m1_hat = m1 / (1.0 - hyper.beta1 ** t)
            m2_hat = m2 / (1.0 - hyper.beta2 ** t)
            vec = vec - lr_vec * m1_hat / (np.sqrt(m2_hat) + hyper.adam_eps)

            result.loss_trace.append(step_loss)
            if initial_loss is None:
                initial_loss = abs(step_loss) if step_loss != 0 else 1.0
            if step_loss > hyper.divergence_factor * initial_loss:
                bad_streak += 1
                if bad_streak >= 3:
                    raise RuntimeError(
                        f"training diverged: loss {step_loss:g} vs initial "
                        f"{initial_loss:g}; trace={result.loss_trace}")
            else:
                bad_streak = 0

        cand = params.from_vector(vec)
        hl = _holdout_loss(cand, holdout_set, config, hyper, holdout_seed)
        result.holdout_trace.append(hl)
        if hl < result.best_holdout:
            result.best_holdout = hl
            best_vec = vec.copy()

    result.params = params.from_vector(best_vec)
    return result
