"""Quick numerical self-checks run by ``repro-all``.

Each returns a dict with the measured quantity and a boolean ``ok``.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from .baselines import fit_gmm_em
from .boost import GbtConfig, fit_bagged, fit_gbt
from .explain import TreeExplainer
from .neural import DaeSpec, Mlp, MlpSpec
from .neural.dae import DadaeModel, dadae_loss_and_grads
from .neural.mlp import SquaredError


def _rel_err(a, b) -> float:
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(num / den)


def _fd(fn, params, h=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. every entry of every array in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = fn()
            p[i] = old - h
            down = fn()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def _random_init(spec, rng):
    # nonzero biases keep ReLU pre-activations off the kink, where differences are meaningless
    net = Mlp.init(spec, rng)
    for b in net.biases:
        b[:] = rng.normal(0.0, 0.5, b.shape)
    return net


def gradient_check(n_configs=5, seed=0, tol=1e-4) -> dict:
    """Backprop vs central differences for MLPs and the adversarial denoiser.

    Each configuration draws layer sizes, an activation and a reversal
    strength; encoder gradients are checked against ``L_R - lam * L_d``,
    decoder gradients against ``L_R`` and head gradients against ``L_d``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    acts = ("tanh", "logistic", "relu")
    for c in range(n_configs):
        p = int(rng.integers(3, 7))
        hidden = (int(rng.integers(3, 8)), int(rng.integers(2, 5)))
        act = acts[c % len(acts)]
        lam = float(rng.uniform(0.1, 2.0))
        x = rng.normal(size=(6, p))
        y = rng.normal(size=(6, p))
        xt = rng.normal(size=(5, p))

        net = _random_init(MlpSpec((p, *hidden, p), act), rng)
        loss = SquaredError(y)
        out, cache = net.forward(x)
        grads, _ = net.backward(cache, loss.grad(out))
        num = _fd(lambda: loss.value(net(x)), net.params)
        worst = max(worst, *(_rel_err(a, b) for a, b in zip(grads, num)))

        spec = DaeSpec(hidden, act, (3,))
        model = DadaeModel(_random_init(spec.encoder(p), rng), _random_init(spec.decoder(p), rng),
                           _random_init(spec.domain_head(), rng), lam)
        _, _, g = dadae_loss_and_grads(model, x, y, xt, lam)

        def objective(part):
            rec, dom, _ = dadae_loss_and_grads(model, x, y, xt, lam)
            return {"encoder": rec - lam * dom, "decoder": rec, "domain_head": dom}[part]

        for part in ("encoder", "decoder", "domain_head"):
            num = _fd(lambda part=part: objective(part), model.nets[part].params)
            worst = max(worst, *(_rel_err(a, b) for a, b in zip(g[part], num)))
    return {"max_rel_error": worst, "configs": n_configs, "ok": worst <= tol}


def _subset_value(ensemble, x, background, subset):
    """E[f(x_S, X_rest)] over the background rows."""
    z = background.copy()
    cols = list(subset)
    z[:, cols] = x[cols]
    return float(ensemble.predict(z).mean())


def brute_force_shap(ensemble, x, background) -> np.ndarray:
    """Exact Shapley values of the background-conditioned value function by enumeration."""
    p = x.shape[0]
    phi = np.zeros(p)
    cache = {}

    def v(s):
        if s not in cache:
            cache[s] = _subset_value(ensemble, x, background, s)
        return cache[s]

    for j in range(p):
        rest = [k for k in range(p) if k != j]
        for r in range(p):
            w = math.factorial(r) * math.factorial(p - r - 1) / math.factorial(p)
            for s in itertools.combinations(rest, r):
                phi[j] += w * (v(tuple(sorted((*s, j)))) - v(s))
    return phi


def shapley_check(seed=0, n_local=1000) -> dict:
    """Interventional Shapley vs enumeration on small ensembles, plus local accuracy."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, bagged in ((4, False), (6, True), (8, False)):
        X = rng.normal(size=(120, p))
        y = X[:, 0] * X[:, 1] + np.sin(X[:, 2]) + 0.1 * rng.normal(size=120)
        ens = (fit_bagged(X, y, 5, 4, seed) if bagged
               else fit_gbt(X, y, GbtConfig(n_trees=8, max_depth=3, eta=0.3, seed=seed)))
        bg = X[:12]
        ex = TreeExplainer(ens, bg, method="interventional")
        for x in X[50:53]:
            worst = max(worst, float(np.max(np.abs(ex.shap_values(x[None])[0]
                                                   - brute_force_shap(ens, x, bg)))))
    X = rng.normal(size=(n_local + 200, 10))
    y = X[:, 0] - 2 * X[:, 3] * (X[:, 5] > 0) + 0.1 * rng.normal(size=X.shape[0])
    ens = fit_gbt(X[:200], y[:200], GbtConfig(n_trees=50, max_depth=4, seed=seed))
    ex = TreeExplainer(ens, X[:100])
    phi = ex.shap_values(X[200:])
    local = float(np.max(np.abs(ex.base_value + phi.sum(axis=1) - ens.predict(X[200:]))))
    return {"max_brute_force_error": worst, "max_local_accuracy_error": local,
            "ok": worst <= 1e-8 and local <= 1e-6}


def gmm_check(seed=0, n=1000) -> dict:
    """Two well separated components, means 0 and 10 with sd 0.1."""
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(0.0, 0.1, n // 2), rng.normal(10.0, 0.1, n - n // 2)])
    g = fit_gmm_em(x, 2, seed)
    err = float(np.max(np.abs(g.means - np.array([0.0, 10.0]))))
    monotone = bool(np.all(np.diff(g.loglik_history) >= -1e-9 * np.abs(g.loglik_history[1:])))
    return {"mean_error": err, "monotone": monotone, "ok": err <= 0.05 and monotone}


def inference_latency(predict_one, x, repeats=200) -> float:
    """Median wall time in ms of ``predict_one(x)``."""
    predict_one(x)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        predict_one(x)
        times.append(time.perf_counter() - t0)
    return float(np.median(times) * 1e3)
