"""Single-layer phonetic / LID networks, the phone-aware composite and checkpoints."""
from __future__ import annotations

import enum
import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core_math import softmax
from .lstmp import LstmParams, ReceiverKind, forward_sequence, init_params

FORMAT_VERSION = 1
MAGIC = b"PALN"

PHONE_HEAD = "phone"
LANG_HEAD = "lang"


class Heads(enum.Enum):
    PHONES_ONLY = "phones"
    LANGUAGES_ONLY = "languages"
    MULTI_TASK = "multitask"

    @classmethod
    def parse(cls, value: "str | Heads") -> "Heads":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"phonesonly": "phones", "phones_only": "phones", "asr": "phones",
                   "languagesonly": "languages", "languages_only": "languages", "lid": "languages",
                   "multi_task": "multitask", "mlt": "multitask"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown heads {value!r}") from None

    @property
    def names(self) -> tuple[str, ...]:
        return {Heads.PHONES_ONLY: (PHONE_HEAD,), Heads.LANGUAGES_ONLY: (LANG_HEAD,),
                Heads.MULTI_TASK: (PHONE_HEAD, LANG_HEAD)}[self]


PRESETS = {
    "paper": dict(cell_dim=1024, rec_dim=256, proj_dim=256),
    "desk": dict(cell_dim=64, rec_dim=16, proj_dim=16),
    "tiny": dict(cell_dim=8, rec_dim=4, proj_dim=4),
}


@dataclass
class NetworkConfig:
    input_dim: int
    phone_targets: int = 0
    language_targets: int = 0
    heads: Heads = Heads.LANGUAGES_ONLY
    receiver: ReceiverKind = ReceiverKind.NONE
    cell_dim: int = 1024
    rec_dim: int = 256
    proj_dim: int = 256
    feat_dim: int = 0
    splice_context: int = 2
    # Original language ids this network's language head covers, in head order.
    languages: list[int] = field(default_factory=list)
    init_scale: float = 0.05

    def __post_init__(self):
        self.heads = Heads.parse(self.heads)
        self.receiver = ReceiverKind.parse(self.receiver)
        for name in ("input_dim", "cell_dim", "rec_dim", "proj_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if PHONE_HEAD in self.heads.names and self.phone_targets < 1:
            raise ValueError("phone head needs phone_targets >= 1")
        if LANG_HEAD in self.heads.names and self.language_targets < 1:
            raise ValueError("language head needs language_targets >= 1")
        if self.receiver is not ReceiverKind.NONE and self.feat_dim < 1:
            raise ValueError("injection needs feat_dim >= 1")
        if self.languages and len(self.languages) != self.language_targets:
            raise ValueError("languages list must match language_targets")

    @classmethod
    def preset(cls, name: str, **kw) -> "NetworkConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **kw})

    def head_sizes(self) -> dict[str, int]:
        sizes = {PHONE_HEAD: self.phone_targets, LANG_HEAD: self.language_targets}
        return {h: sizes[h] for h in self.heads.names}

    def to_json(self) -> dict:
        d = asdict(self)
        d["heads"] = self.heads.value
        d["receiver"] = self.receiver.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


@dataclass
class Network:
    config: NetworkConfig
    params: LstmParams

    @classmethod
    def init(cls, config: NetworkConfig, seed: int = 0) -> "Network":
        params = init_params(config.input_dim, config.cell_dim, config.rec_dim, config.proj_dim,
                             heads=config.head_sizes(), receiver=config.receiver,
                             feat_dim=config.feat_dim, seed=seed, scale=config.init_scale)
        return cls(config, params)

    def copy(self) -> "Network":
        return Network(replace(self.config, languages=list(self.config.languages)),
                       self.params.copy())


@dataclass
class ModelBundle:
    """A trainable network plus, for phone-aware models, its frozen feature extractor."""

    lid_model: Network
    phonetic_model: Network | None = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.receiver is not ReceiverKind.NONE:
            if self.phonetic_model is None:
                raise ValueError(f"receiver {self.receiver.value} needs a phonetic model")
            if self.phonetic_model.config.rec_dim != self.lid_model.params.inj.feat_dim:
                raise ValueError("phonetic rec_dim does not match the injection feature dim")
            if self.phonetic_model.config.input_dim != self.lid_model.config.input_dim:
                raise ValueError("phonetic and LID networks must read the same spliced frames")

    @property
    def receiver(self) -> ReceiverKind:
        return self.lid_model.params.receiver

    @property
    def config(self) -> NetworkConfig:
        return self.lid_model.config


def _as_batch(frames, input_dim: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(frames, dtype=np.float64)
    if X.size == 0 and X.ndim == 1:
        X = X.reshape(0, input_dim)
    if X.ndim == 2:
        return X[:, None, :], True
    if X.ndim == 3:
        return X, False
    raise ValueError("frames must be T x D or T x B x D")


def extract_phonetic_features(model: Network, frames) -> np.ndarray:
    """Recurrent-projection output r_t of ``model`` for every frame.

    ``frames`` is T x D (one utterance) or T x B x D (a padded batch);
    the result has the same leading shape with rec_dim columns.
    """
    X, single = _as_batch(frames, model.config.input_dim)
    if X.shape[-1] != model.config.input_dim:
        raise ValueError(f"frame dim {X.shape[-1]} != input_dim {model.config.input_dim}")
    if model.params.inj is not None:
        raise ValueError("feature extractor must not itself take injected features")
    if X.shape[0] == 0:
        return np.zeros((0, model.config.rec_dim) if single else (0, X.shape[1], model.config.rec_dim))
    R, _, _ = forward_sequence(model.params, X)
    return R[:, 0, :] if single else R


def head_logits(params: LstmParams, R: np.ndarray, P: np.ndarray) -> dict[str, np.ndarray]:
    return {name: R @ h.W_yr.T + P @ h.W_yp.T + h.b_y for name, h in params.heads.items()}


def run_sequence(model: ModelBundle, frames, phonetic_features=None):
    """Forward one utterance (T x D) or a padded batch (T x B x D).

    Returns ``(logits, features)`` where ``logits`` maps head name to
    per-frame logits and ``features`` holds the injected phonetic features
    (None when the model has no receiver).  Precomputed features may be
    passed to skip the phonetic network.
    """
    cfg = model.config
    X, single = _as_batch(frames, cfg.input_dim)
    if X.shape[-1] != cfg.input_dim:
        raise ValueError(f"frame dim {X.shape[-1]} != input_dim {cfg.input_dim}")
    params = model.lid_model.params
    if X.shape[0] == 0:
        empty = {h: np.zeros((0,) + X.shape[1:-1] + (params.heads[h].out_dim,))
                 for h in params.heads}
        if single:
            empty = {h: v[:, 0] if v.ndim == 3 else v for h, v in empty.items()}
        return empty, None
    feats = None
    if model.receiver is not ReceiverKind.NONE:
        if model.phonetic_model is None:
            raise ValueError("receiver set but no phonetic model attached")
        if phonetic_features is None:
            feats = extract_phonetic_features(model.phonetic_model, X)
        else:
            feats = np.asarray(phonetic_features, dtype=np.float64)
            if feats.ndim == 2:
                feats = feats[:, None, :]
    R, P, _ = forward_sequence(params, X, feats)
    logits = head_logits(params, R, P)
    if single:
        logits = {h: v[:, 0, :] for h, v in logits.items()}
        if feats is not None:
            feats = feats[:, 0, :]
    return logits, feats


def frame_posteriors(model: ModelBundle, frames, head: str = LANG_HEAD) -> np.ndarray:
    logits, _ = run_sequence(model, frames)
    if head not in logits:
        raise ValueError(f"model has no {head!r} head")
    return softmax(logits[head]) if len(logits[head]) else logits[head]


def utterance_posterior(frame_posteriors) -> np.ndarray:
    """Arithmetic mean of per-frame posteriors in the probability domain."""
    fp = np.asarray(frame_posteriors, dtype=np.float64)
    if fp.ndim != 2 or fp.shape[0] == 0:
        raise ValueError("empty utterance")
    return fp.mean(axis=0)


# -- padded batches ----------------------------------------------------------

@dataclass
class PreparedUtterance:
    """Spliced network input for one utterance, plus frozen phonetic features if needed."""

    id: str
    X: np.ndarray
    phones: np.ndarray
    language: int
    feats: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.X)


def pad_batch(items: list[PreparedUtterance]):
    """Right-pad to T x B x D. Returns ``(X, feats, mask, lengths)``."""
    lengths = np.array([len(it) for it in items])
    T, B = int(lengths.max()), len(items)
    X = np.zeros((T, B, items[0].X.shape[1]))
    mask = np.arange(T)[:, None] < lengths[None, :]
    feats = None
    if items[0].feats is not None:
        feats = np.zeros((T, B, items[0].feats.shape[1]))
    for b, it in enumerate(items):
        X[:len(it), b] = it.X
        if feats is not None:
            feats[:len(it), b] = it.feats
    return X, feats, mask, lengths


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def _length_sorted_chunks(items, batch_size: int):
    # Batch similar lengths together; results are reported in input order.
    order = sorted(range(len(items)), key=lambda k: (len(items[k]), k))
    for sl in _chunks(len(order), batch_size):
        yield order[sl]


def prepare(bundle: ModelBundle, utterances, batch_size: int = 32) -> list[PreparedUtterance]:
    """Splice frames for ``bundle`` and precompute the frozen phonetic features."""
    from .corpus import splice

    cfg = bundle.config
    out = []
    for utt in utterances:
        X = splice(utt.frames, cfg.splice_context)
        if X.shape[1] != cfg.input_dim:
            raise ValueError(f"{utt.id}: spliced dim {X.shape[1]} != input_dim {cfg.input_dim}")
        out.append(PreparedUtterance(utt.id, X, utt.phone_labels, int(utt.language)))
    if bundle.receiver is not ReceiverKind.NONE:
        for idx in _length_sorted_chunks(out, batch_size):
            batch = [out[k] for k in idx]
            X, _, _, lengths = pad_batch(batch)
            F = extract_phonetic_features(bundle.phonetic_model, X)
            for b, k in enumerate(idx):
                out[k].feats = F[:lengths[b], b].copy()
    return out


def batched_logits(bundle: ModelBundle, prepared: list[PreparedUtterance],
                   batch_size: int = 32) -> list[dict[str, np.ndarray]]:
    """Per-utterance head logits (T_u x n), computed in padded batches."""
    out: list[dict[str, np.ndarray] | None] = [None] * len(prepared)
    params = bundle.lid_model.params
    for idx in _length_sorted_chunks(prepared, batch_size):
        batch = [prepared[k] for k in idx]
        X, feats, _, lengths = pad_batch(batch)
        R, P, _ = forward_sequence(params, X, feats)
        logits = head_logits(params, R, P)
        for b, k in enumerate(idx):
            out[k] = {h: v[:lengths[b], b].copy() for h, v in logits.items()}
    return out


# -- checkpoints -------------------------------------------------------------

class CheckpointError(Exception):
    code = "checkpoint_error"


class NotACheckpointError(CheckpointError):
    code = "bad_magic"


class UnsupportedVersionError(CheckpointError):
    code = "unsupported_version"


class TruncatedCheckpointError(CheckpointError):
    code = "truncated"


class InconsistentCheckpointError(CheckpointError):
    code = "inconsistent_header"


def _network_tensors(prefix: str, net: Network):
    for name, arr in net.params.arrays().items():
        yield prefix + name, arr


def checkpoint_bytes(bundle: ModelBundle) -> bytes:
    header = {
        "lid": bundle.lid_model.config.to_json(),
        "phonetic": None if bundle.phonetic_model is None else bundle.phonetic_model.config.to_json(),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", bundle.format_version))
    block = json.dumps(header, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(block)))
    buf.write(block)
    tensors = list(_network_tensors("lid.", bundle.lid_model))
    if bundle.phonetic_model is not None:
        tensors += list(_network_tensors("phonetic.", bundle.phonetic_model))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode()
        rows, cols = (arr.shape[0], 1) if arr.ndim == 1 else arr.shape
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<II", rows, cols))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(bundle: ModelBundle, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(bundle))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _build_network(cfg_json: dict, arrays: dict[str, np.ndarray]) -> Network:
    try:
        config = NetworkConfig.from_json(cfg_json)
    except (TypeError, ValueError) as exc:
        raise InconsistentCheckpointError(f"bad config block: {exc}") from exc
    reference = Network.init(config).params.arrays()
    if set(reference) != set(arrays):
        raise InconsistentCheckpointError("tensor names do not match the config block")
    for name, ref in reference.items():
        arr = arrays[name]
        if ref.ndim == 1:
            arr = arr.reshape(-1)
        if arr.shape != ref.shape:
            raise InconsistentCheckpointError(
                f"{name}: stored shape {arr.shape} disagrees with config {ref.shape}")
        arrays[name] = arr
    return Network(config, LstmParams.from_arrays(arrays, config.receiver))


def checkpoint_from_bytes(data: bytes) -> ModelBundle:
    rd = _Reader(data)
    if len(data) < 4 or rd.take(4) != MAGIC:
        raise NotACheckpointError("not a checkpoint")
    version = rd.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version} (reader supports {FORMAT_VERSION})")
    try:
        header = json.loads(rd.take(rd.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InconsistentCheckpointError("unreadable config block") from exc
    groups: dict[str, dict[str, np.ndarray]] = {"lid": {}, "phonetic": {}}
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode()
        rows, cols = struct.unpack("<II", rd.take(8))
        arr = np.frombuffer(rd.take(8 * rows * cols), dtype="<f8").astype(np.float64).reshape(rows, cols)
        group, _, key = name.partition(".")
        if group not in groups:
            raise InconsistentCheckpointError(f"unknown tensor group in {name!r}")
        groups[group][key] = arr
    if rd.pos != len(data):
        raise InconsistentCheckpointError("trailing bytes after last tensor")
    lid = _build_network(header["lid"], groups["lid"])
    phonetic = None
    if header.get("phonetic") is not None:
        phonetic = _build_network(header["phonetic"], groups["phonetic"])
    elif groups["phonetic"]:
        raise InconsistentCheckpointError("phonetic tensors without a phonetic config")
    try:
        return ModelBundle(lid, phonetic, version)
    except ValueError as exc:
        raise InconsistentCheckpointError(str(exc)) from exc


def load_checkpoint(path) -> ModelBundle:
    return checkpoint_from_bytes(Path(path).read_bytes())
