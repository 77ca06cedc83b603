"""Model zoo behind one interface: next-activity distribution plus optional
time regression from a raw event prefix. Contains the Markov count-based
baseline, feedforward and recurrent networks, and the stacked autoencoder
classifier."""

from __future__ import annotations

import hashlib
import json
import time
from collections import Counter
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import nnkernel as nn
from .encoding import Normalizer, PrefixEncoder, ngram_hash_encode
from .eventlog import Event, Vocabulary
from .petrinet import PetriNet, replay_timed_state
from .splitting import PrefixSample, SplitLog, make_prefix_samples

ARCHITECTURES = ("markov", "mlp", "rnn", "lstm", "gru", "autoencoder")

SIDECAR_VERSION = 1


@dataclass
class TrainConfig:
    """Hyperparameters shared by the trainable predictors; everything has a
    desk-scale default and can be overridden per model."""

    hidden: int = 64
    layers: int = 2
    batch_size: int = 32
    epochs: int = 100
    patience: int = 10
    lr: float = 0.01
    momentum: float = 0.9
    clip_norm: float | None = 5.0
    lr_decay: float = 0.5  # multiplied in when validation stalls
    lr_patience: int = 5
    time_target: str | None = "next"  # "next" | "remaining" | None
    embedding_dim: int | None = None  # None -> one-hot activities
    attributes: tuple[str, ...] = ()
    include_time: bool = True
    window: int | None = None
    max_len: int | None = None
    # mlp only
    input_mode: str = "padded_flat"  # "padded_flat" | "single_event" | "timed_state"
    decay_seconds: float | None = None  # timed_state horizon; None -> max train case duration
    # markov only
    order: int = 2
    alpha: float = 0.0
    # autoencoder only
    ngram_k: int = 3
    ngram_dim: int = 64
    hash_seed: int = 0
    ae_hidden: tuple[int, ...] = (32, 16)
    pretrain_epochs: int = 15
    freeze_epochs: int = 5

    def __post_init__(self):
        self.attributes = tuple(self.attributes)
        self.ae_hidden = tuple(self.ae_hidden)
        if self.time_target not in (None, "next", "remaining"):
            raise ValueError(f"unknown time_target {self.time_target!r}")


@dataclass(frozen=True)
class TrainReport:
    """Per-epoch losses and the retained best epoch.

    ``wall_clock_seconds`` is informational and excluded from reproducibility
    comparisons; everything else is bit-reproducible for a fixed seed.
    """

    train_losses: tuple[float, ...]
    val_losses: tuple[float, ...]
    best_epoch: int
    wall_clock_seconds: float
    seed: int

    def core(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "seed": self.seed,
        }


class Predictor:
    """Interface: ``predict`` maps an event prefix to an activity probability
    vector over the vocabulary (end-of-case included) and an optional
    non-negative time estimate in seconds (meaning set by ``time_target``)."""

    activity_vocab: Vocabulary
    time_target: str | None = None
    architecture: str = "?"

    def fit(
        self,
        train_samples: Sequence[PrefixSample],
        val_samples: Sequence[PrefixSample],
        config: "TrainConfig | None" = None,
        seed: int = 0,
    ) -> TrainReport:
        raise NotImplementedError

    def predict(self, events: Sequence[Event]) -> tuple[np.ndarray, float | None]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Markov baseline (count-based oracle)
# ---------------------------------------------------------------------------

def fit_ngram_counts(
    samples: Iterable[PrefixSample], order: int, vocab: Vocabulary
) -> list[dict[tuple[str, ...], Counter]]:
    """Context -> next-activity counts for every order 0..order.

    Each prefix sample contributes one observation per order, using the last
    ``j`` activities of its prefix as the order-``j`` context.
    """
    tables: list[dict[tuple[str, ...], Counter]] = [{} for _ in range(order + 1)]
    for sample in samples:
        acts = sample.prefix_activities
        target = vocab.index(sample.next_activity)
        for j in range(0, order + 1):
            if j > len(acts):
                break
            ctx = acts[len(acts) - j :]
            tables[j].setdefault(ctx, Counter())[target] += 1
    return tables


def markov_predict(
    tables: Sequence[Mapping[tuple[str, ...], Counter]],
    prefix_activities: Sequence[str],
    order: int,
    alpha: float,
    vocab: Vocabulary,
) -> np.ndarray:
    """Smoothed conditional distribution of the next activity.

    P(a | context) = (count(context, a) + alpha) / (count(context) + alpha |A|)
    over the longest context with observations, backing off one order at a
    time down to the unigram. With no observations at any order the result is
    the uniform distribution (the pure-smoothing limit).
    """
    acts = tuple(prefix_activities)
    k = len(vocab)
    for j in range(min(order, len(acts)), -1, -1):
        ctx = acts[len(acts) - j :]
        counts = tables[j].get(ctx) if j < len(tables) else None
        if counts:
            total = sum(counts.values())
            probs = np.full(k, float(alpha), dtype=np.float64)
            for idx, c in counts.items():
                probs[idx] += c
            return probs / (total + alpha * k)
    return np.full(k, 1.0 / k, dtype=np.float64)


class MarkovPredictor(Predictor):
    """Backoff n-gram model over activity sequences; doubles as the
    enumeration oracle for the neural models. The time estimate is the mean
    observed next-event delta of the longest matched context."""

    architecture = "markov"

    def __init__(self, activity_vocab: Vocabulary, config: TrainConfig | None = None):
        self.activity_vocab = activity_vocab
        self.config = config or TrainConfig()
        self.time_target = "next"
        self.tables: list[dict[tuple[str, ...], Counter]] = []
        self.delta_tables: list[dict[tuple[str, ...], tuple[float, int]]] = []

    def fit(self, train_samples, val_samples, config=None, seed=0) -> TrainReport:
        start = time.perf_counter()
        if config is not None:
            self.config = config
        order = self.config.order
        self.tables = fit_ngram_counts(train_samples, order, self.activity_vocab)
        self.delta_tables = [{} for _ in range(order + 1)]
        for sample in train_samples:
            acts = sample.prefix_activities
            for j in range(0, order + 1):
                if j > len(acts):
                    break
                ctx = acts[len(acts) - j :]
                total, n = self.delta_tables[j].get(ctx, (0.0, 0))
                self.delta_tables[j][ctx] = (total + sample.next_time_delta, n + 1)
        train_nll = self._mean_nll(train_samples)
        val_nll = self._mean_nll(val_samples) if val_samples else train_nll
        return TrainReport(
            train_losses=(train_nll,),
            val_losses=(val_nll,),
            best_epoch=0,
            wall_clock_seconds=time.perf_counter() - start,
            seed=seed,
        )

    def _mean_nll(self, samples) -> float:
        if not samples:
            return 0.0
        total = 0.0
        for sample in samples:
            probs, _ = self.predict(sample.prefix)
            p = probs[self.activity_vocab.index(sample.next_activity)]
            total += -np.log(max(float(p), 1e-12))
        return total / len(samples)

    def predict(self, events):
        acts = tuple(ev.activity for ev in events)
        probs = markov_predict(
            self.tables, acts, self.config.order, self.config.alpha, self.activity_vocab
        )
        delta = None
        for j in range(min(self.config.order, len(acts)), -1, -1):
            ctx = acts[len(acts) - j :]
            entry = self.delta_tables[j].get(ctx) if j < len(self.delta_tables) else None
            if entry and entry[1] > 0:
                delta = max(0.0, entry[0] / entry[1])
                break
        return probs, delta

    def state(self) -> dict:
        def pack(tables, values):
            out = []
            for table in tables:
                rows = []
                for ctx, entry in table.items():
                    if values:
                        rows.append(["\x1f".join(ctx), entry[0], entry[1]])
                    else:
                        rows.append(["\x1f".join(ctx), {str(k): v for k, v in entry.items()}])
                out.append(rows)
            return out

        return {"counts": pack(self.tables, False), "deltas": pack(self.delta_tables, True)}

    def restore(self, state: Mapping) -> None:
        def unpack_ctx(text: str) -> tuple[str, ...]:
            return tuple(text.split("\x1f")) if text else ()

        self.tables = [
            {unpack_ctx(ctx): Counter({int(k): v for k, v in counts.items()}) for ctx, counts in table}
            for table in state["counts"]
        ]
        self.delta_tables = [
            {unpack_ctx(ctx): (total, n) for ctx, total, n in table}
            for table in state["deltas"]
        ]


# ---------------------------------------------------------------------------
# shared neural plumbing
# ---------------------------------------------------------------------------

def _targets(samples, vocab: Vocabulary):
    y_act = np.array([vocab.index(s.next_activity) for s in samples], dtype=np.int64)
    deltas = np.array([s.next_time_delta for s in samples], dtype=np.float64)
    remaining = np.array([s.remaining_time for s in samples], dtype=np.float64)
    return y_act, deltas, remaining


def _sgd_train(
    params: dict[str, np.ndarray],
    batch_step: Callable[[dict, np.ndarray], tuple[float, dict]],
    val_loss_fn: Callable[[dict], float] | None,
    n_train: int,
    config: TrainConfig,
    seed: int,
) -> tuple[dict[str, np.ndarray], TrainReport]:
    """Mini-batch SGD with per-epoch validation, early stopping, and
    best-validation checkpointing. Deterministic for a fixed seed."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    opt = nn.SGD(config.lr, config.momentum, config.clip_norm)
    train_hist: list[float] = []
    val_hist: list[float] = []
    best_val = np.inf
    best_epoch = 0
    best_params = {k: v.copy() for k, v in params.items()}
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        total = 0.0
        batches = 0
        for s in range(0, n_train, config.batch_size):
            idx = order[s : s + config.batch_size]
            loss, grads = batch_step(params, idx)
            opt.step(params, grads)
            total += loss
            batches += 1
        train_loss = total / max(batches, 1)
        train_hist.append(train_loss)
        val = val_loss_fn(params) if val_loss_fn is not None else train_loss
        val_hist.append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
        stalled = epoch - best_epoch
        if stalled >= config.patience:
            break
        if config.lr_decay < 1.0 and stalled > 0 and stalled % config.lr_patience == 0:
            opt.lr *= config.lr_decay
    report = TrainReport(
        train_losses=tuple(train_hist),
        val_losses=tuple(val_hist),
        best_epoch=best_epoch,
        wall_clock_seconds=time.perf_counter() - start,
        seed=seed,
    )
    return best_params, report


def _init_heads(rng, hidden: int, n_classes: int, with_time: bool, dtype):
    params = {
        "head_act:W": nn.glorot_uniform(rng, hidden, n_classes, dtype),
        "head_act:b": np.zeros(n_classes, dtype=dtype),
    }
    if with_time:
        params["head_time:W"] = nn.glorot_uniform(rng, hidden, 1, dtype)
        params["head_time:b"] = np.zeros(1, dtype=dtype)
    return params


def _heads_forward(params, last):
    logits, act_cache = nn.affine_forward(last, params["head_act:W"], params["head_act:b"])
    tpred = None
    time_cache = None
    if "head_time:W" in params:
        tpred, time_cache = nn.affine_forward(last, params["head_time:W"], params["head_time:b"])
    return logits, tpred, act_cache, time_cache


def _heads_loss_backward(params, logits, tpred, act_cache, time_cache, y_act, y_time):
    """Multitask loss (unweighted sum of task losses) and its gradient on the
    shared feature vector."""
    losses = []
    ce, dlogits = nn.softmax_cross_entropy(logits, y_act)
    losses.append(ce)
    dlast, act_grads = nn.affine_backward(act_cache, dlogits)
    grads = {"head_act:W": act_grads["W"], "head_act:b": act_grads["b"]}
    if tpred is not None and y_time is not None:
        mae, dtpred = nn.mae_loss(tpred[:, 0], y_time)
        losses.append(mae)
        dlast_t, time_grads = nn.affine_backward(time_cache, dtpred[:, None])
        dlast = dlast + dlast_t
        grads["head_time:W"] = time_grads["W"]
        grads["head_time:b"] = time_grads["b"]
    return nn.combine_losses(losses), dlast, grads


def _layer_params(params: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k.split(":", 1)[1]: v for k, v in params.items() if k.startswith(prefix + ":")}


class _NeuralPredictor(Predictor):
    """Encoder handling, the fit/predict scaffolding, and checkpointing shared
    by the numpy models. Subclasses provide parameter construction and the
    network forward/backward."""

    def __init__(
        self,
        activity_vocab: Vocabulary,
        attribute_vocabs: Mapping[str, Vocabulary] | None = None,
        config: TrainConfig | None = None,
    ):
        self.activity_vocab = activity_vocab
        self.attribute_vocabs = dict(attribute_vocabs or {})
        self.config = config or TrainConfig()
        self.time_target = self.config.time_target
        self.params: dict[str, np.ndarray] = {}
        self.encoder: PrefixEncoder | None = None
        self.time_norm: Normalizer | None = None
        self.dtype = np.float32

    # hooks -------------------------------------------------------------
    def _prepare(self, train_samples) -> None:
        self.encoder = self._make_encoder()
        self.encoder.fit(train_samples)

    def _encode_inputs(self, samples):
        mats = [self.encoder.encode(s.prefix) for s in samples]
        X = np.stack([m.values for m in mats]).astype(self.dtype)
        M = np.stack([m.mask for m in mats])
        return X, M

    def _build_params(self, rng) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def _forward(self, params, X, M, with_cache: bool):
        raise NotImplementedError

    def _backward(self, params, caches, dlast):
        raise NotImplementedError

    # shared --------------------------------------------------------------
    def _make_encoder(self) -> PrefixEncoder:
        cfg = self.config
        attr_vocabs = {name: self.attribute_vocabs[name] for name in cfg.attributes}
        return PrefixEncoder(
            self.activity_vocab,
            activity_mode="index" if cfg.embedding_dim else "onehot",
            attribute_vocabs=attr_vocabs,
            include_time=cfg.include_time,
            window=cfg.window,
            max_len=cfg.max_len,
        )

    def fit(self, train_samples, val_samples, config=None, seed=0) -> TrainReport:
        if config is not None:
            self.config = config
            self.time_target = config.time_target
        cfg = self.config
        if not train_samples:
            raise ValueError("no training samples")
        self._prepare(train_samples)
        X, M = self._encode_inputs(train_samples)
        y_act, deltas, remaining = _targets(train_samples, self.activity_vocab)
        y_time = None
        if cfg.time_target is not None:
            raw = deltas if cfg.time_target == "next" else remaining
            self.time_norm = Normalizer("log").fit(raw)
            y_time = self.time_norm.transform(raw)
        have_val = bool(val_samples)
        if have_val:
            Xv, Mv = self._encode_inputs(val_samples)
            yv_act, dv, rv = _targets(val_samples, self.activity_vocab)
            yv_time = None
            if cfg.time_target is not None:
                yv_time = self.time_norm.transform(dv if cfg.time_target == "next" else rv)
        rng = np.random.default_rng(seed)
        params = self._build_params(rng)

        def batch_step(p, idx):
            logits, tpred, caches = self._forward(p, X[idx], M[idx] if M is not None else None, True)
            y_t = y_time[idx] if y_time is not None else None
            loss, dlast, grads = _heads_loss_backward(
                p, logits, tpred, caches["act_cache"], caches["time_cache"], y_act[idx], y_t
            )
            grads.update(self._backward(p, caches, dlast))
            return loss, grads

        def val_loss(p):
            logits, tpred, _ = self._forward(p, Xv, Mv, False)
            losses = [nn.softmax_cross_entropy(logits, yv_act)[0]]
            if tpred is not None and yv_time is not None:
                losses.append(nn.mae_loss(tpred[:, 0], yv_time)[0])
            return nn.combine_losses(losses)

        self.params, report = _sgd_train(
            params, batch_step, val_loss if have_val else None, len(train_samples), cfg, seed
        )
        return report

    def predict(self, events):
        if not self.params:
            raise RuntimeError("predictor used before fit()")
        X, M = self._encode_inputs_single(events)
        logits, tpred, _ = self._forward(self.params, X, M, False)
        probs = nn.softmax(logits[0].astype(np.float64))
        delta = None
        if tpred is not None and self.time_norm is not None:
            delta = max(0.0, float(self.time_norm.inverse(np.array([tpred[0, 0]]))[0]))
        return probs, delta

    def _encode_inputs_single(self, events):
        mat = self.encoder.encode(events)
        return mat.values[None].astype(self.dtype), mat.mask[None]

    # checkpointing ---------------------------------------------------------
    def _sidecar(self, seed: int) -> dict:
        cfg = asdict(self.config)
        cfg["ae_hidden"] = list(self.config.ae_hidden)
        cfg["attributes"] = list(self.config.attributes)
        vocab_blob = json.dumps(
            {
                "activities": list(self.activity_vocab.labels),
                "attributes": {k: list(v.labels) for k, v in self.attribute_vocabs.items()},
            },
            sort_keys=True,
        )
        return {
            "format_version": SIDECAR_VERSION,
            "architecture": self.architecture,
            "seed": seed,
            "config": cfg,
            "activity_vocab": list(self.activity_vocab.labels),
            "attribute_vocabs": {k: list(v.labels) for k, v in self.attribute_vocabs.items()},
            "encoder": self.encoder.state() if self.encoder else None,
            "time_norm": self.time_norm.state() if self.time_norm else None,
            "extra": self._sidecar_extra(),
            "vocab_sha256": hashlib.sha256(vocab_blob.encode()).hexdigest(),
        }

    def _sidecar_extra(self) -> dict:
        return {}

    def save(self, path_prefix: str | Path, seed: int = 0) -> None:
        path_prefix = Path(path_prefix)
        path_prefix.parent.mkdir(parents=True, exist_ok=True)
        nn.save_params(
            path_prefix.with_suffix(".npz"), self.params, {"architecture": self.architecture}
        )
        path_prefix.with_suffix(".json").write_text(
            json.dumps(self._sidecar(seed), indent=2, sort_keys=True), encoding="utf-8"
        )

    def _restore(self, sidecar: Mapping, params: dict) -> None:
        self.params = params
        if sidecar.get("encoder"):
            self.encoder = PrefixEncoder.from_state(
                sidecar["encoder"], self.activity_vocab, self.attribute_vocabs
            )
        if sidecar.get("time_norm"):
            self.time_norm = Normalizer.from_state(sidecar["time_norm"])


class RecurrentPredictor(_NeuralPredictor):
    """Stacked recurrent network (vanilla RNN, LSTM, or GRU) over padded
    prefixes; the last real timestep's hidden state feeds a softmax activity
    head and a linear time head trained jointly with early stopping."""

    def __init__(self, cell: str, activity_vocab, attribute_vocabs=None, config=None):
        if cell not in nn.CELLS:
            raise ValueError(f"unknown cell {cell!r}")
        super().__init__(activity_vocab, attribute_vocabs, config)
        self.cell = cell
        self.architecture = cell

    def _input_dim(self) -> int:
        base = self.encoder.num_features
        if self.config.embedding_dim:
            return base - 1 + self.config.embedding_dim
        return base

    def _build_params(self, rng):
        cfg = self.config
        if cfg.hidden < 1 or cfg.layers < 1:
            raise ValueError("hidden and layers must be >= 1")
        params: dict[str, np.ndarray] = {}
        if cfg.embedding_dim:
            params["emb"] = nn.glorot_uniform(
                rng, len(self.activity_vocab), cfg.embedding_dim, self.dtype
            )
        in_dim = self._input_dim()
        for layer in range(cfg.layers):
            cell_params = nn.init_cell(self.cell, rng, in_dim, cfg.hidden, self.dtype)
            params.update({f"l{layer}:{k}": v for k, v in cell_params.items()})
            in_dim = cfg.hidden
        params.update(
            _init_heads(
                rng, cfg.hidden, len(self.activity_vocab), cfg.time_target is not None, self.dtype
            )
        )
        return params

    def _forward(self, params, X, M, with_cache: bool):
        cfg = self.config
        if cfg.embedding_dim:
            group = self.encoder.layout.group("activity")
            idx = X[:, :, group.start].astype(np.int64)
            dense = np.delete(X, group.start, axis=2)
            inputs = np.concatenate([params["emb"][idx], dense], axis=2).astype(X.dtype)
        else:
            idx = None
            inputs = X
        layer_caches = []
        current = inputs
        for layer in range(cfg.layers):
            lp = _layer_params(params, f"l{layer}")
            hs, caches = nn.sequence_forward(self.cell, lp, current, M)
            layer_caches.append(caches)
            current = hs
        last = current[:, -1, :]
        logits, tpred, act_cache, time_cache = _heads_forward(params, last)
        caches = None
        if with_cache:
            caches = {
                "act_cache": act_cache,
                "time_cache": time_cache,
                "layer_caches": layer_caches,
                "T": X.shape[1],
                "idx": idx,
            }
        return logits, tpred, caches

    def _backward(self, params, caches, dlast):
        cfg = self.config
        grads: dict[str, np.ndarray] = {}
        B, H = dlast.shape
        upstream = np.zeros((B, caches["T"], H), dtype=dlast.dtype)
        upstream[:, -1, :] = dlast
        for layer in reversed(range(cfg.layers)):
            lp = _layer_params(params, f"l{layer}")
            dxs, layer_grads = nn.sequence_backward(
                self.cell, lp, caches["layer_caches"][layer], upstream
            )
            grads.update({f"l{layer}:{k}": v for k, v in layer_grads.items()})
            upstream = dxs
        if cfg.embedding_dim:
            demb = upstream[:, :, : cfg.embedding_dim]
            grads["emb"] = nn.embedding_backward(params["emb"], caches["idx"], demb)
        return grads


class MLPPredictor(_NeuralPredictor):
    """Feedforward network with ReLU hidden layers over a flat prefix
    encoding: the flattened padded prefix, the single most recent event, or
    the timed state of a Petri-net token replay."""

    architecture = "mlp"

    def __init__(
        self,
        activity_vocab,
        attribute_vocabs=None,
        config=None,
        petri_net: PetriNet | None = None,
    ):
        super().__init__(activity_vocab, attribute_vocabs, config)
        if self.config.input_mode not in ("padded_flat", "single_event", "timed_state"):
            raise ValueError(f"unknown input_mode {self.config.input_mode!r}")
        if self.config.input_mode == "timed_state" and petri_net is None:
            raise ValueError("timed_state input needs a Petri net")
        self.petri_net = petri_net
        self.decay_seconds = self.config.decay_seconds
        self._flat_dim: int | None = None

    def _make_encoder(self) -> PrefixEncoder:
        encoder = super()._make_encoder()
        if self.config.input_mode == "single_event":
            encoder.window = 1
            encoder.max_len = 1
        return encoder

    def _timed_vector(self, events) -> np.ndarray:
        state = replay_timed_state(
            self.petri_net, events, events[-1].timestamp_ms, self.decay_seconds
        )
        attr_vocabs = {name: self.attribute_vocabs[name] for name in self.config.attributes}
        return state.to_vector(attr_vocabs)

    def _prepare(self, train_samples) -> None:
        if self.config.input_mode == "timed_state":
            if self.decay_seconds is None:
                longest = max(
                    (s.prefix[-1].timestamp_ms - s.prefix[0].timestamp_ms) / 1000.0
                    + s.remaining_time
                    for s in train_samples
                )
                self.decay_seconds = max(longest, 1.0)
            self._flat_dim = self._timed_vector(train_samples[0].prefix).shape[0]
            self.encoder = None
        else:
            super()._prepare(train_samples)

    def _encode_inputs(self, samples):
        if self.config.input_mode == "timed_state":
            rows = np.stack([self._timed_vector(s.prefix) for s in samples]).astype(self.dtype)
            return rows, None
        return super()._encode_inputs(samples)

    def _encode_inputs_single(self, events):
        if self.config.input_mode == "timed_state":
            return self._timed_vector(events)[None].astype(self.dtype), None
        return super()._encode_inputs_single(events)

    def _build_params(self, rng):
        cfg = self.config
        if cfg.hidden < 1 or cfg.layers < 1:
            raise ValueError("hidden and layers must be >= 1")
        if cfg.input_mode == "timed_state":
            in_dim = self._flat_dim
        else:
            in_dim = self.encoder.num_features * self.encoder.max_len
        params: dict[str, np.ndarray] = {}
        for layer in range(cfg.layers):
            dense = nn.init_dense(rng, in_dim, cfg.hidden, self.dtype)
            params[f"l{layer}:W"] = dense["W"]
            params[f"l{layer}:b"] = dense["b"]
            in_dim = cfg.hidden
        params.update(
            _init_heads(
                rng, cfg.hidden, len(self.activity_vocab), cfg.time_target is not None, self.dtype
            )
        )
        return params

    def _forward(self, params, X, M, with_cache: bool):
        current = X.reshape(X.shape[0], -1) if X.ndim == 3 else X
        layer_caches = []
        for layer in range(self.config.layers):
            z, a_cache = nn.affine_forward(current, params[f"l{layer}:W"], params[f"l{layer}:b"])
            current, r_cache = nn.relu_forward(z)
            layer_caches.append((a_cache, r_cache))
        logits, tpred, act_cache, time_cache = _heads_forward(params, current)
        caches = None
        if with_cache:
            caches = {
                "act_cache": act_cache,
                "time_cache": time_cache,
                "layer_caches": layer_caches,
            }
        return logits, tpred, caches

    def _backward(self, params, caches, dlast):
        grads: dict[str, np.ndarray] = {}
        upstream = dlast
        for layer in reversed(range(self.config.layers)):
            a_cache, r_cache = caches["layer_caches"][layer]
            upstream = nn.relu_backward(r_cache, upstream)
            upstream, layer_grads = nn.affine_backward(a_cache, upstream)
            grads[f"l{layer}:W"] = layer_grads["W"]
            grads[f"l{layer}:b"] = layer_grads["b"]
        return grads

    def _sidecar_extra(self) -> dict:
        return {"decay_seconds": self.decay_seconds, "flat_dim": self._flat_dim}


class AutoencoderPredictor(_NeuralPredictor):
    """Stacked undercomplete autoencoder over hashed n-gram prefix vectors,
    pretrained layerwise on reconstruction, then topped with a softmax
    next-activity head (frozen-encoder warmup, then finetuning). Predicts the
    activity only; no time head."""

    architecture = "autoencoder"

    def __init__(self, activity_vocab, attribute_vocabs=None, config=None):
        config = replace(config, time_target=None) if config else TrainConfig(time_target=None)
        super().__init__(activity_vocab, attribute_vocabs, config)
        self.time_target = None
        dims = [config.ngram_dim, *config.ae_hidden]
        for smaller, larger in zip(dims[1:], dims):
            if smaller >= larger:
                raise ValueError(
                    f"undercompleteness violated: hidden {smaller} >= input {larger}"
                )
        self.recon_losses: list[tuple[float, ...]] = []

    def _prepare(self, train_samples) -> None:
        self.encoder = None

    def _ngram_vector(self, events) -> np.ndarray:
        acts = [ev.activity for ev in events]
        return ngram_hash_encode(
            acts, self.config.ngram_k, self.config.ngram_dim, self.config.hash_seed
        )

    def _encode_inputs(self, samples):
        rows = np.stack([self._ngram_vector(s.prefix) for s in samples]).astype(self.dtype)
        return rows, None

    def _encode_inputs_single(self, events):
        return self._ngram_vector(events)[None].astype(self.dtype), None

    def _encoder_stack(self, params, X, with_cache: bool):
        current = X
        caches = []
        for layer in range(len(self.config.ae_hidden)):
            z, a_cache = nn.affine_forward(current, params[f"enc{layer}:W"], params[f"enc{layer}:b"])
            current = np.tanh(z)
            caches.append((a_cache, current))
        return current, caches

    def _encoder_stack_backward(self, params, caches, dtop):
        grads = {}
        upstream = dtop
        for layer in reversed(range(len(self.config.ae_hidden))):
            a_cache, activated = caches[layer]
            upstream = upstream * (1.0 - activated * activated)
            upstream, layer_grads = nn.affine_backward(a_cache, upstream)
            grads[f"enc{layer}:W"] = layer_grads["W"]
            grads[f"enc{layer}:b"] = layer_grads["b"]
        return grads

    def _build_params(self, rng):
        params: dict[str, np.ndarray] = {}
        in_dim = self.config.ngram_dim
        for layer, hidden in enumerate(self.config.ae_hidden):
            params[f"enc{layer}:W"] = nn.glorot_uniform(rng, in_dim, hidden, self.dtype)
            params[f"enc{layer}:b"] = np.zeros(hidden, dtype=self.dtype)
            in_dim = hidden
        params.update(_init_heads(rng, in_dim, len(self.activity_vocab), False, self.dtype))
        return params

    def fit(self, train_samples, val_samples, config=None, seed=0) -> TrainReport:
        if config is not None:
            self.config = replace(config, time_target=None)
        cfg = self.config
        if not train_samples:
            raise ValueError("no training samples")
        self._prepare(train_samples)
        X, _ = self._encode_inputs(train_samples)
        y_act, _, _ = _targets(train_samples, self.activity_vocab)
        rng = np.random.default_rng(seed)
        params = self._build_params(rng)

        # stage 1: greedy layerwise reconstruction pretraining
        self.recon_losses = []
        current = X
        pre_cfg = TrainConfig(
            epochs=cfg.pretrain_epochs, patience=cfg.pretrain_epochs,
            batch_size=cfg.batch_size, lr=cfg.lr, momentum=cfg.momentum,
            clip_norm=cfg.clip_norm, time_target=None,
        )
        for layer, hidden in enumerate(cfg.ae_hidden):
            in_dim = current.shape[1]
            layer_params = {
                "We": params[f"enc{layer}:W"],
                "be": params[f"enc{layer}:b"],
                "Wd": nn.glorot_uniform(rng, hidden, in_dim, self.dtype),
                "bd": np.zeros(in_dim, dtype=self.dtype),
            }
            data = current

            def recon_step(p, idx, data=data):
                x = data[idx]
                z, ecache = nn.affine_forward(x, p["We"], p["be"])
                h = np.tanh(z)
                recon, dcache = nn.affine_forward(h, p["Wd"], p["bd"])
                loss, drecon = nn.mse_loss(recon, x)
                dh, dgrads = nn.affine_backward(dcache, drecon)
                dz = dh * (1.0 - h * h)
                _, egrads = nn.affine_backward(ecache, dz)
                return loss, {
                    "We": egrads["W"], "be": egrads["b"],
                    "Wd": dgrads["W"], "bd": dgrads["b"],
                }

            layer_params, layer_report = _sgd_train(
                layer_params, recon_step, None, current.shape[0], pre_cfg, seed + layer + 1
            )
            params[f"enc{layer}:W"] = layer_params["We"]
            params[f"enc{layer}:b"] = layer_params["be"]
            self.recon_losses.append(layer_report.train_losses)
            current = np.tanh(current @ layer_params["We"] + layer_params["be"])

        # stage 2: frozen-encoder head warmup, then finetuning of everything
        have_val = bool(val_samples)
        if have_val:
            Xv, _ = self._encode_inputs(val_samples)
            yv_act, _, _ = _targets(val_samples, self.activity_vocab)

        def head_only_step(p, idx):
            feats, _ = self._encoder_stack(p, X[idx], False)
            logits, _, act_cache, _ = _heads_forward(p, feats)
            loss, dlogits = nn.softmax_cross_entropy(logits, y_act[idx])
            _, head_grads = nn.affine_backward(act_cache, dlogits)
            return loss, {"head_act:W": head_grads["W"], "head_act:b": head_grads["b"]}

        def full_step(p, idx):
            feats, caches = self._encoder_stack(p, X[idx], True)
            logits, _, act_cache, _ = _heads_forward(p, feats)
            loss, dlogits = nn.softmax_cross_entropy(logits, y_act[idx])
            dfeats, head_grads = nn.affine_backward(act_cache, dlogits)
            grads = {"head_act:W": head_grads["W"], "head_act:b": head_grads["b"]}
            grads.update(self._encoder_stack_backward(p, caches, dfeats))
            return loss, grads

        def val_loss(p):
            feats, _ = self._encoder_stack(p, Xv, False)
            logits, _, _, _ = _heads_forward(p, feats)
            return nn.softmax_cross_entropy(logits, yv_act)[0]

        warm_cfg = TrainConfig(
            epochs=cfg.freeze_epochs, patience=cfg.freeze_epochs,
            batch_size=cfg.batch_size, lr=cfg.lr, momentum=cfg.momentum,
            clip_norm=cfg.clip_norm, time_target=None,
        )
        params, _ = _sgd_train(params, head_only_step, None, X.shape[0], warm_cfg, seed + 101)
        params, report = _sgd_train(
            params, full_step, val_loss if have_val else None, X.shape[0], cfg, seed
        )
        self.params = params
        return report

    def predict(self, events):
        if not self.params:
            raise RuntimeError("predictor used before fit()")
        X, _ = self._encode_inputs_single(events)
        feats, _ = self._encoder_stack(self.params, X, False)
        logits, _, _, _ = _heads_forward(self.params, feats)
        return nn.softmax(logits[0].astype(np.float64)), None


# ---------------------------------------------------------------------------
# factories, training entry point, checkpoint reload, random search
# ---------------------------------------------------------------------------

def mlp_model(
    config: TrainConfig,
    activity_vocab: Vocabulary,
    attribute_vocabs=None,
    petri_net: PetriNet | None = None,
) -> MLPPredictor:
    return MLPPredictor(activity_vocab, attribute_vocabs, config, petri_net)


def recurrent_model(
    cell: str, config: TrainConfig, activity_vocab: Vocabulary, attribute_vocabs=None
) -> RecurrentPredictor:
    return RecurrentPredictor(cell, activity_vocab, attribute_vocabs, config)


def autoencoder_classifier(
    config: TrainConfig, activity_vocab: Vocabulary, attribute_vocabs=None
) -> AutoencoderPredictor:
    return AutoencoderPredictor(activity_vocab, attribute_vocabs, config)


def build_predictor(
    architecture: str,
    config: TrainConfig,
    activity_vocab: Vocabulary,
    attribute_vocabs=None,
    petri_net: PetriNet | None = None,
) -> Predictor:
    if architecture == "markov":
        return MarkovPredictor(activity_vocab, config)
    if architecture == "mlp":
        return mlp_model(config, activity_vocab, attribute_vocabs, petri_net)
    if architecture in nn.CELLS:
        return recurrent_model(architecture, config, activity_vocab, attribute_vocabs)
    if architecture == "autoencoder":
        return autoencoder_classifier(config, activity_vocab, attribute_vocabs)
    raise ValueError(f"unknown architecture {architecture!r}")


def train(
    predictor: Predictor,
    split: SplitLog,
    config: TrainConfig | None = None,
    seed: int = 0,
    min_k: int = 1,
) -> TrainReport:
    """Fit a predictor on a chronological split; encoders and normalization
    statistics are fitted on the training part only."""
    train_samples = make_prefix_samples(split.train, min_k)
    val_samples = make_prefix_samples(split.validation, min_k) if split.validation.traces else []
    return predictor.fit(train_samples, val_samples, config, seed)


def save_predictor(predictor: Predictor, path_prefix: str | Path, seed: int = 0) -> None:
    """Checkpoint = parameter file plus a JSON sidecar sufficient to reload
    and predict without retraining."""
    path_prefix = Path(path_prefix)
    if isinstance(predictor, MarkovPredictor):
        path_prefix.parent.mkdir(parents=True, exist_ok=True)
        sidecar = {
            "format_version": SIDECAR_VERSION,
            "architecture": "markov",
            "seed": seed,
            "config": {"order": predictor.config.order, "alpha": predictor.config.alpha},
            "activity_vocab": list(predictor.activity_vocab.labels),
            "attribute_vocabs": {},
            "state": predictor.state(),
        }
        path_prefix.with_suffix(".json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8"
        )
        return
    predictor.save(path_prefix, seed)  # type: ignore[union-attr]


def load_predictor(path_prefix: str | Path, petri_net: PetriNet | None = None) -> Predictor:
    path_prefix = Path(path_prefix)
    sidecar = json.loads(path_prefix.with_suffix(".json").read_text(encoding="utf-8"))
    if sidecar.get("format_version") != SIDECAR_VERSION:
        raise ValueError(f"unsupported sidecar version {sidecar.get('format_version')!r}")
    activity_vocab = Vocabulary(sidecar["activity_vocab"])
    architecture = sidecar["architecture"]
    if architecture == "markov":
        predictor = MarkovPredictor(
            activity_vocab,
            TrainConfig(order=sidecar["config"]["order"], alpha=sidecar["config"]["alpha"]),
        )
        predictor.restore(sidecar["state"])
        return predictor
    attribute_vocabs = {k: Vocabulary(v) for k, v in sidecar["attribute_vocabs"].items()}
    cfg_dict = dict(sidecar["config"])
    cfg_dict["attributes"] = tuple(cfg_dict.get("attributes", ()))
    cfg_dict["ae_hidden"] = tuple(cfg_dict.get("ae_hidden", ()))
    config = TrainConfig(**cfg_dict)
    params, _ = nn.load_params(path_prefix.with_suffix(".npz"))
    if architecture in nn.CELLS:
        predictor = RecurrentPredictor(architecture, activity_vocab, attribute_vocabs, config)
    elif architecture == "mlp":
        predictor = MLPPredictor(activity_vocab, attribute_vocabs, config, petri_net)
        extra = sidecar.get("extra") or {}
        predictor.decay_seconds = extra.get("decay_seconds")
        predictor._flat_dim = extra.get("flat_dim")
    elif architecture == "autoencoder":
        predictor = AutoencoderPredictor(activity_vocab, attribute_vocabs, config)
    else:
        raise ValueError(f"unknown architecture {architecture!r}")
    predictor._restore(sidecar, params)
    return predictor


def random_search(
    space: Mapping[str, Sequence], n: int, seed: int = 0, base: TrainConfig | None = None
) -> list[TrainConfig]:
    """Seeded random-search utility: n configurations sampled uniformly and
    independently per hyperparameter from ``space``."""
    rng = np.random.default_rng(seed)
    base_dict = asdict(base or TrainConfig())
    configs = []
    for _ in range(n):
        drawn = dict(base_dict)
        for key, choices in space.items():
            drawn[key] = choices[int(rng.integers(len(choices)))]
        drawn["attributes"] = tuple(drawn.get("attributes", ()))
        drawn["ae_hidden"] = tuple(drawn.get("ae_hidden", ()))
        configs.append(TrainConfig(**drawn))
    return configs
