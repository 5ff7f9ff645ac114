"""Full-sequence BPTT training with SGD + momentum.

Losses are per-frame cross entropies averaged within an utterance, then
averaged over the utterances of a batch.  The language label is applied
to every frame.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core_math import PROB_FLOOR
from .lstmp import LstmParams, ReceiverKind, backward_sequence, forward_sequence
from .networks import (LANG_HEAD, PHONE_HEAD, ModelBundle, Network, NetworkConfig,
                       PreparedUtterance, head_logits, pad_batch, prepare)

log = logging.getLogger(__name__)

_LOG_FLOOR = math.log(PROB_FLOOR)


@dataclass
class LossSpec:
    lambda_phone: float = 1.0
    lambda_lang: float = 1.0

    def __post_init__(self):
        if self.lambda_phone < 0 or self.lambda_lang < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lambda_phone + self.lambda_lang <= 0:
            raise ValueError("at least one loss weight must be positive")

    def weights(self) -> dict[str, float]:
        return {PHONE_HEAD: self.lambda_phone, LANG_HEAD: self.lambda_lang}

    @classmethod
    def for_heads(cls, heads) -> "LossSpec":
        names = heads.names
        return cls(1.0 if PHONE_HEAD in names else 0.0, 1.0 if LANG_HEAD in names else 0.0)


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 16
    lr_halving: bool = True
    patience: int = 1
    seed: int = 0
    gradient_clip: float = 5.0
    # Gradients are computed per micro-batch and summed in a fixed order,
    # so results do not depend on the worker count.
    microbatch_size: int = 16
    workers: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.microbatch_size < 1:
            raise ValueError("epochs, batch_size and microbatch_size must be >= 1")
        if not self.gradient_clip > 0:
            raise ValueError("gradient_clip must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_acc_phone: float | None
    dev_acc_lang: float | None
    lr: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    COLUMNS = ("epoch", "train_loss", "dev_loss", "dev_acc_phone", "dev_acc_lang", "lr")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.records:
            w.writerow([r.epoch] + ["" if v is None else repr(float(v)) for v in
                                    (r.train_loss, r.dev_loss, r.dev_acc_phone, r.dev_acc_lang, r.lr)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


def _active_heads(params: LstmParams, loss_spec: LossSpec) -> dict[str, float]:
    active = {}
    for name, lam in loss_spec.weights().items():
        if lam > 0:
            if name not in params.heads:
                raise ValueError(f"loss weight for {name!r} is positive but the model has no such head")
            active[name] = lam
    return active


def _targets(items: list[PreparedUtterance], head: str, T: int) -> np.ndarray:
    Y = np.zeros((T, len(items)), dtype=np.int64)
    for b, it in enumerate(items):
        if head == PHONE_HEAD:
            if it.phones is None or len(it.phones) != len(it):
                raise ValueError(f"{it.id}: missing phone labels")
            Y[:len(it), b] = it.phones
        else:
            if it.language is None or it.language < 0:
                raise ValueError(f"{it.id}: missing language label")
            Y[:len(it), b] = it.language
    return Y


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _head_loss(logits: np.ndarray, Y: np.ndarray, weight: np.ndarray):
    """Weighted floored CE summed over frames, and its gradient w.r.t. the logits."""
    logp = _log_softmax(logits)
    n = logits.shape[-1]
    if Y.max(initial=0) >= n:
        raise ValueError(f"label {Y.max()} out of range for {n} targets")
    picked = np.take_along_axis(logp, Y[..., None], axis=-1)[..., 0]
    floored = picked < _LOG_FLOOR
    loss = float(np.sum(weight * -np.maximum(picked, _LOG_FLOOR)))
    grad = np.exp(logp)
    np.put_along_axis(grad, Y[..., None], np.take_along_axis(grad, Y[..., None], axis=-1) - 1.0, axis=-1)
    grad *= np.where(floored, 0.0, weight)[..., None]
    return loss, grad


def _microbatch_loss_and_grads(params: LstmParams, items: list[PreparedUtterance],
                               active: dict[str, float], denom: int):
    """Sum over ``items`` of per-utterance losses divided by ``denom``, with gradients."""
    X, feats, mask, lengths = pad_batch(items)
    R, P, cache = forward_sequence(params, X, feats)
    logits = head_logits(params, R, P)
    # frame weight: 1 / (utterance length * batch size), zero on padding
    frame_w = mask / (lengths[None, :] * float(denom))
    grads = params.zeros_like()
    dR = np.zeros_like(R)
    dP = np.zeros_like(P)
    total = 0.0
    for name in sorted(active):
        head = params.heads[name]
        Y = _targets(items, name, X.shape[0])
        loss, dY = _head_loss(logits[name], Y, active[name] * frame_w)
        total += loss
        g = grads.heads[name]
        g.W_yr = dY.reshape(-1, dY.shape[-1]).T @ R.reshape(-1, R.shape[-1])
        g.W_yp = dY.reshape(-1, dY.shape[-1]).T @ P.reshape(-1, P.shape[-1])
        g.b_y = dY.reshape(-1, dY.shape[-1]).sum(axis=0)
        dR += dY @ head.W_yr
        dP += dY @ head.W_yp
    cell, _, _ = backward_sequence(params, cache, dR, dP)
    for key, value in cell.arrays().items():
        if not key.startswith("heads."):
            _assign(grads, key, value)
    return total, grads


def _assign(params: LstmParams, key: str, value: np.ndarray) -> None:
    if key == "inj.W_inj":
        params.inj.W_inj = value
    else:
        setattr(params, key, value)


def _add_into(acc: LstmParams, other: LstmParams) -> None:
    for (_, a), (_, b) in zip(acc.arrays().items(), other.arrays().items()):
        a += b


def batch_loss_and_grads(params: LstmParams, items: list[PreparedUtterance], loss_spec: LossSpec,
                         microbatch_size: int | None = None, executor=None):
    """Mean utterance loss over ``items`` and its exact gradient."""
    active = _active_heads(params, loss_spec)
    mb = microbatch_size or len(items)
    chunks = [items[s:s + mb] for s in range(0, len(items), mb)]

    def work(chunk):
        return _microbatch_loss_and_grads(params, chunk, active, len(items))

    results = list(executor.map(work, chunks)) if executor is not None else [work(c) for c in chunks]
    loss, grads = results[0]
    for extra_loss, extra in results[1:]:
        loss += extra_loss
        _add_into(grads, extra)
    return loss, grads


def sequence_loss_and_grads(model: ModelBundle, utterance, loss_spec: LossSpec):
    """Loss and BPTT gradients of the trainable network on one utterance.

    ``utterance`` is a corpus Utterance or an already prepared one.
    """
    item = utterance if isinstance(utterance, PreparedUtterance) else prepare(model, [utterance])[0]
    return batch_loss_and_grads(model.lid_model.params, [item], loss_spec)


def global_norm(grads: LstmParams) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays().values()))


def sgd_step(params: LstmParams, grads: LstmParams, velocity: LstmParams | None,
             lr: float, momentum: float, clip: float = math.inf):
    """One momentum step with global-norm clipping; returns new (params, velocity)."""
    p_arr, g_arr = params.arrays(), grads.arrays()
    if velocity is None:
        velocity = params.zeros_like()
    v_arr = velocity.arrays()
    if p_arr.keys() != g_arr.keys() or p_arr.keys() != v_arr.keys():
        raise ValueError("params, grads and velocity have different tensors")
    for k in p_arr:
        if p_arr[k].shape != g_arr[k].shape or p_arr[k].shape != v_arr[k].shape:
            raise ValueError(f"shape mismatch for {k}: {p_arr[k].shape} vs {g_arr[k].shape}")
    norm = global_norm(grads)
    scale = clip / norm if norm > clip else 1.0
    new_v = {k: momentum * v_arr[k] + (g_arr[k] * scale if scale != 1.0 else g_arr[k]) for k in p_arr}
    new_p = {k: p_arr[k] - lr * new_v[k] for k in p_arr}
    receiver = params.receiver
    return LstmParams.from_arrays(new_p, receiver), LstmParams.from_arrays(new_v, receiver)


def evaluate(params: LstmParams, items: list[PreparedUtterance], loss_spec: LossSpec,
             batch_size: int = 32) -> tuple[float, dict[str, float]]:
    """Mean utterance loss and per-head frame accuracy (forward only)."""
    active = _active_heads(params, loss_spec)
    total = 0.0
    correct = {h: 0 for h in params.heads}
    frames = 0
    order = sorted(range(len(items)), key=lambda k: (len(items[k]), k))
    for s in range(0, len(order), batch_size):
        batch = [items[k] for k in order[s:s + batch_size]]
        X, feats, mask, lengths = pad_batch(batch)
        R, P, _ = forward_sequence(params, X, feats)
        logits = head_logits(params, R, P)
        frame_w = mask / (lengths[None, :] * float(len(items)))
        for name in params.heads:
            Y = _targets(batch, name, X.shape[0])
            if name in active:
                loss, _ = _head_loss(logits[name], Y, active[name] * frame_w)
                total += loss
            correct[name] += int(np.sum((logits[name].argmax(axis=-1) == Y) & mask))
        frames += int(mask.sum())
    return total, {h: c / frames for h, c in correct.items()}


def _epoch_batches(n: int, batch_size: int, lengths: np.ndarray, seed: int, epoch: int):
    """Seeded shuffle, then group similar lengths within windows of 8 batches."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA7C, epoch]))
    order = rng.permutation(n)
    window = 8 * batch_size
    batches = []
    for s in range(0, n, window):
        chunk = sorted(order[s:s + window], key=lambda k: (lengths[k], k))
        batches += [chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size)]
    return [batches[k] for k in rng.permutation(len(batches))]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("PALN_THREADS", "1")))
    except ValueError:
        return 1


def train(config: TrainConfig, net_config: NetworkConfig, loss_spec: LossSpec,
          train_set, dev_set, frozen_phonetic: Network | None = None,
          progress=None) -> tuple[ModelBundle, TrainLog]:
    """Train a fresh network; returns the best-dev-loss bundle and the epoch log.

    ``train_set``/``dev_set`` are lists of corpus Utterances whose language
    labels already index ``net_config``'s language head.
    """
    if not train_set or not dev_set:
        raise ValueError("training and dev sets must be non-empty")
    if (net_config.receiver is not ReceiverKind.NONE) != (frozen_phonetic is not None):
        raise ValueError("a frozen phonetic model is required exactly when a receiver is set")
    model = Network.init(net_config, seed=config.seed)
    bundle = ModelBundle(model, frozen_phonetic)
    items = prepare(bundle, train_set)
    dev_items = prepare(bundle, dev_set)
    _active_heads(model.params, loss_spec)
    n_lang = net_config.language_targets
    for it in items + dev_items:
        if n_lang and not 0 <= it.language < n_lang:
            raise ValueError(f"{it.id}: language label {it.language} outside the {n_lang}-way head")

    params = model.params
    velocity = params.zeros_like()
    lr = config.learning_rate
    lengths = np.array([len(it) for it in items])
    best_loss, best_params = math.inf, params.copy()
    stale = 0
    history = TrainLog()
    executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            epoch_loss = 0.0
            batches = _epoch_batches(len(items), config.batch_size, lengths, config.seed, epoch)
            for step, idx in enumerate(batches):
                batch = [items[k] for k in idx]
                loss, grads = batch_loss_and_grads(params, batch, loss_spec,
                                                   config.microbatch_size, executor)
                if not math.isfinite(loss):
                    raise TrainingDiverged(epoch, step, loss)
                params, velocity = sgd_step(params, grads, velocity, lr, config.momentum,
                                            config.gradient_clip)
                epoch_loss += loss * len(batch)
            dev_loss, acc = evaluate(params, dev_items, loss_spec)
            if not math.isfinite(dev_loss):
                raise TrainingDiverged(epoch, len(batches), dev_loss)
            history.records.append(EpochRecord(epoch, epoch_loss / len(items), dev_loss,
                                               acc.get(PHONE_HEAD), acc.get(LANG_HEAD), lr))
            log.info("epoch %d train %.4f dev %.4f acc %s lr %g", epoch, epoch_loss / len(items),
                     dev_loss, acc, lr)
            if progress is not None:
                progress(history.records[-1])
            if dev_loss < best_loss:
                best_loss, best_params, stale = dev_loss, params.copy(), 0
            else:
                stale += 1
                if config.lr_halving and stale >= config.patience:
                    lr *= 0.5
                    stale = 0
    finally:
        if executor is not None:
            executor.shutdown()
    return ModelBundle(Network(net_config, best_params), frozen_phonetic), history
