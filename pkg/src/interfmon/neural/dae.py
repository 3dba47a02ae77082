"""Denoising auto-encoder and its domain-adversarial variant.

The DAE maps interfered feature vectors to the clean vector of the same
(app, workload) group. The domain-adaptive DAE adds a logistic domain head
behind a gradient reversal layer: the head learns to tell offline (source)
from online (target) rows while the encoder is pushed to make them
indistinguishable. Reconstruction is only supervised on source rows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..validation import check_features
from .mlp import LogisticLoss, Mlp, MlpSpec, SquaredError

log = logging.getLogger(__name__)

# stream roles inside one SeedSequence spawn; shared by DAE and DADAE so that a
# DADAE with lambda = 0 replays the DAE update sequence exactly
_ENC, _DEC, _HEAD, _SRC, _TGT = range(5)


class TrainingDiverged(RuntimeError):
    pass


class GradientReversal:
    """Identity on the forward pass, ``-lam * g`` on the backward pass."""

    def __init__(self, lam: float = 1.0):
        if lam < 0:
            raise ValueError("GRL coefficient must be >= 0")
        self.lam = float(lam)

    def forward(self, x):
        return x

    def backward(self, g):
        return -self.lam * np.asarray(g)


def grl_transform(lam: float) -> GradientReversal:
    return GradientReversal(lam)


@dataclass(frozen=True)
class DaeSpec:
    hidden: tuple = (128, 32)
    activation: str = "relu"
    domain_hidden: tuple = (16,)

    def encoder(self, n_features) -> MlpSpec:
        return MlpSpec((n_features, *self.hidden), self.activation, self.activation)

    def decoder(self, n_features) -> MlpSpec:
        return MlpSpec((*self.hidden[::-1], n_features), self.activation, "identity")

    def domain_head(self) -> MlpSpec:
        return MlpSpec((self.hidden[-1], *self.domain_hidden, 1), self.activation, "logistic")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    lambda_max: float = 1.0
    lambda_gamma: float = 10.0
    momentum: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 0 or self.batch_size <= 0:
            raise ValueError("need lr > 0, epochs >= 0, batch_size > 0")
        if self.lambda_max < 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lambda_max >= 0 and momentum in [0, 1)")

    def grl_lambda(self, progress: float) -> float:
        """Warm-up ``lambda_max * (2 / (1 + exp(-gamma p)) - 1)`` over progress ``p`` in [0, 1]."""
        return self.lambda_max * (2.0 / (1.0 + np.exp(-self.lambda_gamma * progress)) - 1.0)


class DaeModel:
    def __init__(self, encoder: Mlp, decoder: Mlp, seed: int = 0, history=None):
        if decoder.spec.layer_sizes[-1] != encoder.spec.layer_sizes[0]:
            raise ValueError("decoder output width must equal encoder input width")
        self.encoder = encoder
        self.decoder = decoder
        self.seed = seed
        self.history = list(history or [])

    kind = "dae"

    @property
    def n_features(self) -> int:
        return self.encoder.spec.layer_sizes[0]

    @property
    def nets(self) -> dict:
        return {"encoder": self.encoder, "decoder": self.decoder}

    def denoise(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = self.decoder(self.encoder(np.atleast_2d(x)))
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite denoiser output")
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "history": self.history,
                **{k: v.to_dict() for k, v in self.nets.items()}}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @staticmethod
    def from_dict(d) -> "DaeModel":
        enc, dec = Mlp.from_dict(d["encoder"]), Mlp.from_dict(d["decoder"])
        if d["kind"] == "dadae":
            return DadaeModel(enc, dec, Mlp.from_dict(d["domain_head"]), d.get("grl_lambda", 1.0),
                              d["seed"], d.get("history"))
        if d["kind"] != "dae":
            raise ValueError(f"not a denoiser model: {d.get('kind')!r}")
        return DaeModel(enc, dec, d["seed"], d.get("history"))

    @staticmethod
    def load(path) -> "DaeModel":
        return DaeModel.from_dict(json.loads(Path(path).read_text()))


class DadaeModel(DaeModel):
    kind = "dadae"

    def __init__(self, encoder, decoder, domain_head: Mlp, grl_lambda=1.0, seed=0, history=None):
        super().__init__(encoder, decoder, seed, history)
        if domain_head.spec.output != "logistic":
            raise ValueError("domain head must end in a logistic unit")
        self.domain_head = domain_head
        self.grl_lambda = float(grl_lambda)

    @property
    def nets(self) -> dict:
        return {"encoder": self.encoder, "decoder": self.decoder, "domain_head": self.domain_head}

    def domain_proba(self, x) -> np.ndarray:
        return self.domain_head(self.encoder(np.atleast_2d(x))).ravel()

    def to_dict(self) -> dict:
        return {**super().to_dict(), "grl_lambda": self.grl_lambda}


def denoise(model: DaeModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {x.shape[-1]}")
    return model.denoise(x)


# --- losses and gradients --------------------------------------------------------

def dae_loss_and_grads(model: DaeModel, x, y):
    """Reconstruction loss and gradients ``{"encoder": [...], "decoder": [...]}``."""
    h, c_enc = model.encoder.forward(x)
    out, c_dec = model.decoder.forward(h)
    loss = SquaredError(y, per_dim=True)
    g_dec, g_h = model.decoder.backward(c_dec, loss.grad(out))
    g_enc, _ = model.encoder.backward(c_enc, g_h)
    return loss.value(out), {"encoder": g_enc, "decoder": g_dec}


def dadae_loss_and_grads(model: DadaeModel, xs, ys, xt, lam):
    """Losses ``(L_R, L_d)`` and the gradients applied by one adversarial step.

    Decoder gradients follow ``L_R``, domain-head gradients follow ``L_d`` and
    encoder gradients follow ``L_R - lam * L_d`` (the reversal layer sits
    between the encoder and the head). Source and target rows pass through the
    encoder separately.
    """
    grl = GradientReversal(lam)
    hs, c_es = model.encoder.forward(xs)
    ht, c_et = model.encoder.forward(xt)
    out, c_dec = model.decoder.forward(hs)
    rec = SquaredError(ys, per_dim=True)
    g_dec, g_hs = model.decoder.backward(c_dec, rec.grad(out))

    n_dom = hs.shape[0] + ht.shape[0]
    ps, c_hs = model.domain_head.forward(grl.forward(hs))
    pt, c_ht = model.domain_head.forward(grl.forward(ht))
    dom_s = LogisticLoss(np.zeros(hs.shape[0]), norm=n_dom)
    dom_t = LogisticLoss(np.ones(ht.shape[0]), norm=n_dom)
    g_head_s, g_hs_dom = model.domain_head.backward(c_hs, dom_s.grad(ps))
    g_head_t, g_ht_dom = model.domain_head.backward(c_ht, dom_t.grad(pt))

    g_enc_s, _ = model.encoder.backward(c_es, g_hs + grl.backward(g_hs_dom))
    g_enc_t, _ = model.encoder.backward(c_et, grl.backward(g_ht_dom))
    grads = {
        "encoder": [a + b for a, b in zip(g_enc_s, g_enc_t)],
        "decoder": g_dec,
        "domain_head": [a + b for a, b in zip(g_head_s, g_head_t)],
    }
    return rec.value(out), dom_s.value(ps) + dom_t.value(pt), grads


# --- training --------------------------------------------------------------------

class _Sgd:
    def __init__(self, nets: dict, lr, momentum):
        self.nets, self.lr, self.momentum = nets, lr, momentum
        self.velocity = {k: [np.zeros_like(p) for p in n.params] for k, n in nets.items()}

    def step(self, grads: dict):
        for key, gs in grads.items():
            for p, g, v in zip(self.nets[key].params, gs, self.velocity[key]):
                if self.momentum:
                    v *= self.momentum
                    v -= self.lr * g
                    p += v
                else:
                    p -= self.lr * g


def _streams(seed):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]


def _check_pairs(x, y):
    x = check_features(x, name="x_noisy")
    y = check_features(y, n_features=x.shape[1], name="x_clean")
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("need a non-empty, aligned set of (noisy, clean) pairs")
    return x, y


def _abort(what, epoch, batch, value):
    raise TrainingDiverged(f"{what} diverged at epoch {epoch}, batch {batch} (loss={value}); "
                           "lower the learning rate or rescale the inputs")


def train_dae(x_noisy, x_clean, spec: DaeSpec = DaeSpec(), cfg: TrainConfig = TrainConfig(),
              init: DaeModel | None = None) -> DaeModel:
    """Mini-batch SGD on the mean squared reconstruction error.

    ``history`` holds the mean training loss of every epoch.
    """
    x, y = _check_pairs(x_noisy, x_clean)
    rng = _streams(cfg.seed)
    n, p = x.shape
    if init is None:
        model = DaeModel(Mlp.init(spec.encoder(p), rng[_ENC]), Mlp.init(spec.decoder(p), rng[_DEC]),
                         cfg.seed)
    else:
        model = DaeModel(init.encoder.copy(), init.decoder.copy(), cfg.seed)
    opt = _Sgd(model.nets, cfg.lr, cfg.momentum)
    for epoch in range(cfg.epochs):
        perm = rng[_SRC].permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = dae_loss_and_grads(model, x[idx], y[idx])
            if not np.isfinite(loss):
                _abort("DAE training", epoch, b, loss)
            opt.step(grads)
            total += loss * idx.shape[0]
        model.history.append(total / n)
        log.debug("dae epoch %d loss %.6f", epoch, total / n)
    return model


def train_dadae(x_source, x_source_clean, x_target, spec: DaeSpec = DaeSpec(),
                cfg: TrainConfig = TrainConfig(), init: DaeModel | None = None) -> DadaeModel:
    """Adversarial training of encoder/decoder/domain head.

    Source rows (domain 0) come with clean targets; target rows (domain 1)
    are unlabelled. Each step uses one source batch and an equally sized
    target batch drawn by cycling through a shuffled target order. ``init``
    warm-starts the encoder/decoder from an offline DAE.

    ``history`` rows are ``[reconstruction, domain loss, lambda]`` per epoch.
    """
    x, y = _check_pairs(x_source, x_source_clean)
    xt = check_features(x_target, n_features=x.shape[1], name="x_target")
    if xt.shape[0] == 0:
        raise ValueError("target domain is empty")
    rng = _streams(cfg.seed)
    n, p = x.shape
    if init is None:
        enc, dec = Mlp.init(spec.encoder(p), rng[_ENC]), Mlp.init(spec.decoder(p), rng[_DEC])
    else:
        enc, dec = init.encoder.copy(), init.decoder.copy()
    model = DadaeModel(enc, dec, Mlp.init(spec.domain_head(), rng[_HEAD]), cfg.lambda_max, cfg.seed)
    opt = _Sgd(model.nets, cfg.lr, cfg.momentum)
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    t_perm, t_pos = rng[_TGT].permutation(xt.shape[0]), 0
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng[_SRC].permutation(n)
        rec_sum = dom_sum = 0.0
        lam = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            t_idx = np.empty(idx.shape[0], dtype=np.int64)
            for j in range(idx.shape[0]):
                if t_pos == t_perm.shape[0]:
                    t_perm, t_pos = rng[_TGT].permutation(xt.shape[0]), 0
                t_idx[j] = t_perm[t_pos]
                t_pos += 1
            lam = cfg.grl_lambda(step / total_steps)
            rec, dom, grads = dadae_loss_and_grads(model, x[idx], y[idx], xt[t_idx], lam)
            if not (np.isfinite(rec) and np.isfinite(dom)):
                _abort("DADAE training", epoch, b, (rec, dom))
            opt.step(grads)
            rec_sum += rec * idx.shape[0]
            dom_sum += dom * idx.shape[0]
            step += 1
        model.history.append([rec_sum / n, dom_sum / n, lam])
    return model


# --- estimators ------------------------------------------------------------------

class DenoisingAutoEncoder(TransformerMixin, BaseEstimator):
    """``fit(X_noisy, X_clean)``; ``transform`` returns the denoised features."""

    def __init__(self, hidden=(128, 32), activation="relu", lr=1e-2, epochs=100, batch_size=64,
                 momentum=0.0, seed=0):
        self.hidden = hidden
        self.activation = activation
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.seed = seed

    def _spec(self):
        return DaeSpec(tuple(self.hidden), self.activation)

    def _cfg(self, **extra):
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           seed=self.seed, momentum=self.momentum, **extra)

    def fit(self, X, y=None):
        if y is None:
            y = X
        self.model_ = train_dae(X, y, self._spec(), self._cfg())
        self.n_features_in_ = self.model_.n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return denoise(self.model_, check_features(X, self.model_.n_features))


class DomainAdaptiveDAE(DenoisingAutoEncoder):
    """``fit(X_source, X_source_clean, X_target=...)`` with adversarial alignment."""

    def __init__(self, hidden=(128, 32), activation="relu", lr=1e-2, epochs=100, batch_size=64,
                 momentum=0.0, seed=0, lambda_max=1.0, domain_hidden=(16,), warm_start=None):
        super().__init__(hidden, activation, lr, epochs, batch_size, momentum, seed)
        self.lambda_max = lambda_max
        self.domain_hidden = domain_hidden
        self.warm_start = warm_start

    def fit(self, X, y=None, X_target=None):
        if X_target is None:
            raise ValueError("DomainAdaptiveDAE.fit needs unlabelled X_target rows")
        if y is None:
            y = X
        spec = DaeSpec(tuple(self.hidden), self.activation, tuple(self.domain_hidden))
        self.model_ = train_dadae(X, y, X_target, spec, self._cfg(lambda_max=self.lambda_max),
                                  init=self.warm_start)
        self.n_features_in_ = self.model_.n_features
        return self


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
