"""Finite-difference verification of every shipped architecture at desk scale
(float64, hidden sizes 4-8, short sequences). Used by the CLI gradcheck
subcommand and the acceptance suite."""

from __future__ import annotations

import numpy as np

from . import nnkernel as nn
from .eventlog import Event, EventLog, Trace, Vocabulary, augment_eoc
from .models import (
    MLPPredictor,
    RecurrentPredictor,
    TrainConfig,
    _heads_loss_backward,
    _targets,
)
from .splitting import make_prefix_samples

GRADCHECK_GATE = 1e-4


def _tiny_samples(seed: int = 0):
    """A few short traces with varied activities and gaps; enough structure to
    exercise every parameter."""
    rng = np.random.default_rng(seed)
    acts = ("A", "B", "C")
    traces = []
    base = 1_600_000_000_000
    for i in range(4):
        length = 3 + int(rng.integers(0, 2))  # 3 or 4 real events, seq len <= 5 with EOC
        t = base + i * 7_200_000
        events = []
        for j in range(length):
            t += int(rng.integers(1, 5)) * 3_600_000
            events.append(
                Event(case_id=f"c{i}", activity=acts[int(rng.integers(0, 3))], timestamp_ms=t)
            )
        traces.append(Trace(case_id=f"c{i}", events=tuple(events)))
    log = augment_eoc(EventLog(traces=tuple(traces), activity_vocab=Vocabulary(acts)))
    return make_prefix_samples(log), log.activity_vocab


def _predictor_gradcheck(predictor, samples, seed: int) -> float:
    predictor.dtype = np.float64
    predictor._prepare(samples)
    X, M = predictor._encode_inputs(samples)
    y_act, deltas, remaining = _targets(samples, predictor.activity_vocab)
    y_time = None
    if predictor.config.time_target is not None:
        from .encoding import Normalizer

        raw = deltas if predictor.config.time_target == "next" else remaining
        predictor.time_norm = Normalizer("log").fit(raw)
        y_time = predictor.time_norm.transform(raw)
    rng = np.random.default_rng(seed)
    params = predictor._build_params(rng)

    def loss_fn(p):
        logits, tpred, caches = predictor._forward(p, X, M, True)
        loss, dlast, grads = _heads_loss_backward(
            p, logits, tpred, caches["act_cache"], caches["time_cache"], y_act, y_time
        )
        grads.update(predictor._backward(p, caches, dlast))
        return loss, grads

    return nn.gradcheck(loss_fn, params)


def _stacked_autoencoder_gradcheck(seed: int) -> float:
    """Full stacked undercomplete autoencoder (tanh encoders, linear decoders)
    plus the softmax head, checked jointly under the combined loss."""
    rng = np.random.default_rng(seed)
    n, d0, d1, d2, k = 6, 10, 8, 5, 3
    X = rng.normal(size=(n, d0))
    y = rng.integers(0, k, size=n)
    params = {
        "We0": nn.glorot_uniform(rng, d0, d1, np.float64),
        "be0": np.zeros(d1),
        "We1": nn.glorot_uniform(rng, d1, d2, np.float64),
        "be1": np.zeros(d2),
        "Wd1": nn.glorot_uniform(rng, d2, d1, np.float64),
        "bd1": np.zeros(d1),
        "Wd0": nn.glorot_uniform(rng, d1, d0, np.float64),
        "bd0": np.zeros(d0),
        "Wcls": nn.glorot_uniform(rng, d2, k, np.float64),
        "bcls": np.zeros(k),
    }

    def loss_fn(p):
        z0, c0 = nn.affine_forward(X, p["We0"], p["be0"])
        h1 = np.tanh(z0)
        z1, c1 = nn.affine_forward(h1, p["We1"], p["be1"])
        h2 = np.tanh(z1)
        r1, cr1 = nn.affine_forward(h2, p["Wd1"], p["bd1"])
        r0, cr0 = nn.affine_forward(r1, p["Wd0"], p["bd0"])
        recon_loss, dr0 = nn.mse_loss(r0, X)
        logits, ccls = nn.affine_forward(h2, p["Wcls"], p["bcls"])
        ce, dlogits = nn.softmax_cross_entropy(logits, y)
        loss = nn.combine_losses([recon_loss, ce])

        dr1, g_d0 = nn.affine_backward(cr0, dr0)
        dh2_recon, g_d1 = nn.affine_backward(cr1, dr1)
        dh2_cls, g_cls = nn.affine_backward(ccls, dlogits)
        dh2 = dh2_recon + dh2_cls
        dz1 = dh2 * (1.0 - h2 * h2)
        dh1, g_e1 = nn.affine_backward(c1, dz1)
        dz0 = dh1 * (1.0 - h1 * h1)
        _, g_e0 = nn.affine_backward(c0, dz0)
        grads = {
            "We0": g_e0["W"], "be0": g_e0["b"],
            "We1": g_e1["W"], "be1": g_e1["b"],
            "Wd1": g_d1["W"], "bd1": g_d1["b"],
            "Wd0": g_d0["W"], "bd0": g_d0["b"],
            "Wcls": g_cls["W"], "bcls": g_cls["b"],
        }
        return loss, grads

    return nn.gradcheck(loss_fn, params)


def architecture_gradcheck(arch: str, seed: int = 0) -> float:
    """Max relative gradient error of one architecture's full training loss."""
    if arch == "autoencoder":
        return _stacked_autoencoder_gradcheck(seed)
    samples, vocab = _tiny_samples(seed)
    config = TrainConfig(hidden=6, layers=2, time_target="next")
    if arch == "mlp":
        predictor = MLPPredictor(vocab, config=config)
    elif arch in nn.CELLS:
        predictor = RecurrentPredictor(arch, vocab, config=config)
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    return _predictor_gradcheck(predictor, samples, seed)


def all_gradchecks(seed: int = 0) -> dict[str, float]:
    return {
        arch: architecture_gradcheck(arch, seed)
        for arch in ("mlp", "rnn", "lstm", "gru", "autoencoder")
    }
