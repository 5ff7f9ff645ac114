"""Projected LSTM layer with diagonal peepholes and optional feature injection.

One step computes::

    i_t = sigm(W_ix x_t + W_ir r_{t-1} + w_ic * c_{t-1} + b_i)
    f_t = sigm(W_fx x_t + W_fr r_{t-1} + w_fc * c_{t-1} + b_f)
    c_t = f_t * c_{t-1} + i_t * tanh(W_cx x_t + W_cr r_{t-1} + b_c)
    o_t = sigm(W_ox x_t + W_or r_{t-1} + w_oc * c_t + b_o)
    m_t = o_t * tanh(c_t)
    r_t = W_rm m_t        (recurrent projection, fed back)
    p_t = W_pm m_t        (non-recurrent projection)

and an output head maps ``y_t = W_yr r_t + W_yp p_t + b_y``.  When an
external feature ``e_t`` is injected, ``W_inj e_t`` is added to the
pre-activation of one receiver: one of the three gates or the cell input
non-linearity.

All functions accept a single vector or a batch of row vectors (leading
axes are batch axes).
"""
from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field

import numpy as np

from .core_math import sigmoid

GATE_MATRICES = ("W_ix", "W_ir", "W_fx", "W_fr", "W_cx", "W_cr", "W_ox", "W_or")
CELL_VECTORS = ("w_ic", "w_fc", "w_oc", "b_i", "b_f", "b_c", "b_o")
PROJECTIONS = ("W_rm", "W_pm")


class ReceiverKind(enum.Enum):
    NONE = "none"
    INPUT_GATE = "input_gate"
    FORGET_GATE = "forget_gate"
    OUTPUT_GATE = "output_gate"
    G_FUNCTION = "g_function"

    @classmethod
    def parse(cls, value: "str | ReceiverKind") -> "ReceiverKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"g": "g_function", "gfunction": "g_function", "input": "input_gate",
                   "forget": "forget_gate", "output": "output_gate", "inputgate": "input_gate",
                   "forgetgate": "forget_gate", "outputgate": "output_gate"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown receiver {value!r}") from None


# Slot of each receiver in the stacked [i, f, g, o] pre-activation.
_RECEIVER_SLOT = {
    ReceiverKind.INPUT_GATE: 0,
    ReceiverKind.FORGET_GATE: 1,
    ReceiverKind.G_FUNCTION: 2,
    ReceiverKind.OUTPUT_GATE: 3,
}


@dataclass
class InjectionParams:
    receiver: ReceiverKind
    W_inj: np.ndarray  # cell_dim x feat_dim

    @property
    def feat_dim(self) -> int:
        return self.W_inj.shape[1]


@dataclass
class OutputHead:
    W_yr: np.ndarray  # out_dim x rec_dim
    W_yp: np.ndarray  # out_dim x proj_dim
    b_y: np.ndarray

    @property
    def out_dim(self) -> int:
        return self.b_y.shape[0]


@dataclass
class LstmParams:
    """Weights of one projected LSTM layer, its output heads and injection."""

    W_ix: np.ndarray
    W_ir: np.ndarray
    W_fx: np.ndarray
    W_fr: np.ndarray
    W_cx: np.ndarray
    W_cr: np.ndarray
    W_ox: np.ndarray
    W_or: np.ndarray
    w_ic: np.ndarray
    w_fc: np.ndarray
    w_oc: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    W_rm: np.ndarray
    W_pm: np.ndarray
    heads: dict[str, OutputHead] = field(default_factory=dict)
    inj: InjectionParams | None = None

    @property
    def input_dim(self) -> int:
        return self.W_ix.shape[1]

    @property
    def cell_dim(self) -> int:
        return self.W_ix.shape[0]

    @property
    def rec_dim(self) -> int:
        return self.W_rm.shape[0]

    @property
    def proj_dim(self) -> int:
        return self.W_pm.shape[0]

    @property
    def receiver(self) -> ReceiverKind:
        return ReceiverKind.NONE if self.inj is None else self.inj.receiver

    def arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array mapping. The arrays are the live storage."""
        out = {name: getattr(self, name) for name in GATE_MATRICES + CELL_VECTORS + PROJECTIONS}
        for hname in sorted(self.heads):
            head = self.heads[hname]
            out[f"heads.{hname}.W_yr"] = head.W_yr
            out[f"heads.{hname}.W_yp"] = head.W_yp
            out[f"heads.{hname}.b_y"] = head.b_y
        if self.inj is not None:
            out["inj.W_inj"] = self.inj.W_inj
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray],
                    receiver: ReceiverKind = ReceiverKind.NONE) -> "LstmParams":
        base = {name: arrays[name] for name in GATE_MATRICES + CELL_VECTORS + PROJECTIONS}
        heads: dict[str, OutputHead] = {}
        for key in arrays:
            if key.startswith("heads."):
                _, hname, _ = key.split(".")
                if hname not in heads:
                    heads[hname] = OutputHead(arrays[f"heads.{hname}.W_yr"],
                                              arrays[f"heads.{hname}.W_yp"],
                                              arrays[f"heads.{hname}.b_y"])
        inj = None
        if "inj.W_inj" in arrays:
            if receiver is ReceiverKind.NONE:
                raise ValueError("injection weights present but receiver is none")
            inj = InjectionParams(receiver, arrays["inj.W_inj"])
        elif receiver is not ReceiverKind.NONE:
            raise ValueError(f"receiver {receiver.value} requires injection weights")
        params = cls(**base, heads=heads, inj=inj)
        params.validate()
        return params

    def map(self, fn) -> "LstmParams":
        """New params with ``fn`` applied to every array."""
        return LstmParams.from_arrays({k: fn(v) for k, v in self.arrays().items()}, self.receiver)

    def copy(self) -> "LstmParams":
        return self.map(np.copy)

    def zeros_like(self) -> "LstmParams":
        return self.map(np.zeros_like)

    def validate(self) -> None:
        C, D, R, P = self.cell_dim, self.input_dim, self.rec_dim, self.proj_dim
        expected = {}
        for gate in "ifco":
            expected[f"W_{gate}x"] = (C, D)
            expected[f"W_{gate}r"] = (C, R)
        for name in CELL_VECTORS:
            expected[name] = (C,)
        expected["W_rm"] = (R, C)
        expected["W_pm"] = (P, C)
        for hname, head in self.heads.items():
            n = head.b_y.shape[0] if head.b_y.ndim == 1 else -1
            expected[f"heads.{hname}.W_yr"] = (n, R)
            expected[f"heads.{hname}.W_yp"] = (n, P)
            expected[f"heads.{hname}.b_y"] = (n,)
        if self.inj is not None:
            expected["inj.W_inj"] = (C, self.inj.W_inj.shape[1])
        for name, arr in self.arrays().items():
            if arr.shape != expected[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Input weights (4C x D), recurrent weights (4C x R) and biases in i, f, g, o order."""
        Wx = np.concatenate([self.W_ix, self.W_fx, self.W_cx, self.W_ox])
        Wr = np.concatenate([self.W_ir, self.W_fr, self.W_cr, self.W_or])
        b = np.concatenate([self.b_i, self.b_f, self.b_c, self.b_o])
        return Wx, Wr, b


def init_params(input_dim: int, cell_dim: int, rec_dim: int, proj_dim: int,
                heads: dict[str, int] | None = None,
                receiver: ReceiverKind = ReceiverKind.NONE, feat_dim: int = 0,
                seed: int = 0, scale: float = 0.05) -> LstmParams:
    """Uniform(-scale, scale) weights, zero biases.

    The cell, each head and the injection matrix draw from separate seeded
    streams, so adding a head or a receiver never changes the others.
    """
    def stream(*key):
        return np.random.default_rng(np.random.SeedSequence([seed, *key]))

    rng = stream(0)

    def u(*shape, rng=rng):
        return rng.uniform(-scale, scale, size=shape)

    kw = {}
    for gate in "ifco":
        kw[f"W_{gate}x"] = u(cell_dim, input_dim)
        kw[f"W_{gate}r"] = u(cell_dim, rec_dim)
    kw["w_ic"] = u(cell_dim)
    kw["w_fc"] = u(cell_dim)
    kw["w_oc"] = u(cell_dim)
    for gate in "ifco":
        kw[f"b_{gate}"] = np.zeros(cell_dim)
    kw["W_rm"] = u(rec_dim, cell_dim)
    kw["W_pm"] = u(proj_dim, cell_dim)
    out_heads = {}
    for hname in sorted(heads or {}):
        n = heads[hname]
        hrng = stream(1, zlib.crc32(hname.encode()))
        out_heads[hname] = OutputHead(u(n, rec_dim, rng=hrng), u(n, proj_dim, rng=hrng), np.zeros(n))
    inj = None
    if receiver is not ReceiverKind.NONE:
        if feat_dim < 1:
            raise ValueError("injection needs feat_dim >= 1")
        inj = InjectionParams(receiver, u(cell_dim, feat_dim, rng=stream(2)))
    return LstmParams(**kw, heads=out_heads, inj=inj)


@dataclass
class CellState:
    c: np.ndarray
    r: np.ndarray

    @classmethod
    def zeros(cls, params: LstmParams, batch_shape: tuple[int, ...] = ()) -> "CellState":
        return cls(np.zeros(batch_shape + (params.cell_dim,)),
                   np.zeros(batch_shape + (params.rec_dim,)))


@dataclass
class StepCache:
    """Intermediate signals of one forward step, kept for its backward pass."""

    x: np.ndarray | None
    c_prev: np.ndarray
    r_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    m: np.ndarray
    r: np.ndarray
    p: np.ndarray
    feat: np.ndarray | None
    receiver: ReceiverKind


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {name}")


def _step(params: LstmParams, zx: np.ndarray, Wr: np.ndarray, c_prev: np.ndarray,
          r_prev: np.ndarray, feat: np.ndarray | None, x: np.ndarray | None) -> StepCache:
    """One step given the precomputed input part ``zx = Wx x + b`` of all four pre-activations."""
    C = params.cell_dim
    z = zx + r_prev @ Wr.T
    a_i = z[..., :C] + params.w_ic * c_prev
    a_f = z[..., C:2 * C] + params.w_fc * c_prev
    a_g = z[..., 2 * C:3 * C]
    a_o = z[..., 3 * C:]
    receiver = params.receiver
    if params.inj is not None:
        injected = feat @ params.inj.W_inj.T
        if receiver is ReceiverKind.INPUT_GATE:
            a_i = a_i + injected
        elif receiver is ReceiverKind.FORGET_GATE:
            a_f = a_f + injected
        elif receiver is ReceiverKind.G_FUNCTION:
            a_g = a_g + injected
    i = sigmoid(a_i)
    f = sigmoid(a_f)
    g = np.tanh(a_g)
    c = f * c_prev + i * g
    a_o = a_o + params.w_oc * c
    if receiver is ReceiverKind.OUTPUT_GATE:
        a_o = a_o + injected
    o = sigmoid(a_o)
    tanh_c = np.tanh(c)
    m = o * tanh_c
    r = m @ params.W_rm.T
    p = m @ params.W_pm.T
    return StepCache(x, c_prev, r_prev, i, f, g, o, c, tanh_c, m, r, p, feat, receiver)


def _check_feat(params: LstmParams, feat) -> np.ndarray | None:
    if params.inj is None:
        if feat is not None:
            raise ValueError("phonetic feature given but the cell has no injection")
        return None
    if feat is None:
        raise ValueError(f"receiver {params.receiver.value} needs a phonetic feature")
    feat = np.asarray(feat, dtype=np.float64)
    if feat.shape[-1] != params.inj.feat_dim:
        raise ValueError(f"W_inj expects feature dim {params.inj.feat_dim}, got {feat.shape[-1]}")
    _check_finite("phonetic feature", feat)
    return feat


def cell_forward(params: LstmParams, x, prev: CellState,
                 phon_feat=None) -> tuple[CellState, np.ndarray, StepCache]:
    """Advance the cell by one frame; returns the new state, p_t and the step cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"W_ix expects input dim {params.input_dim}, got {x.shape[-1]}")
    if prev.c.shape[-1] != params.cell_dim:
        raise ValueError(f"w_ic expects cell dim {params.cell_dim}, got {prev.c.shape[-1]}")
    if prev.r.shape[-1] != params.rec_dim:
        raise ValueError(f"W_ir expects recurrent dim {params.rec_dim}, got {prev.r.shape[-1]}")
    _check_finite("input", x)
    feat = _check_feat(params, phon_feat)
    Wx, Wr, b = params.stacked()
    cache = _step(params, x @ Wx.T + b, Wr, prev.c, prev.r, feat, x)
    return CellState(cache.c, cache.r), cache.p, cache


def output_forward(head: OutputHead, r, p) -> np.ndarray:
    """Logits ``W_yr r + W_yp p + b_y`` (no softmax)."""
    r = np.asarray(r, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if r.shape[-1] != head.W_yr.shape[1]:
        raise ValueError(f"W_yr expects dim {head.W_yr.shape[1]}, got {r.shape[-1]}")
    if p.shape[-1] != head.W_yp.shape[1]:
        raise ValueError(f"W_yp expects dim {head.W_yp.shape[1]}, got {p.shape[-1]}")
    return r @ head.W_yr.T + p @ head.W_yp.T + head.b_y


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum over batch axes of outer(a, b)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _bsum(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


def _step_backward(params: LstmParams, Wr: np.ndarray, cache: StepCache,
                   grad_r: np.ndarray, grad_c: np.ndarray, grad_p: np.ndarray):
    """Pre-activation grads [i, f, g, o] and the grads flowing to c_{t-1}, r_{t-1}."""
    dm = grad_r @ params.W_rm + grad_p @ params.W_pm
    o = cache.o
    da_o = dm * cache.tanh_c * o * (1.0 - o)
    dc = grad_c + dm * o * (1.0 - cache.tanh_c ** 2) + da_o * params.w_oc
    i, f, g = cache.i, cache.f, cache.g
    da_i = dc * g * i * (1.0 - i)
    da_f = dc * cache.c_prev * f * (1.0 - f)
    da_g = dc * i * (1.0 - g ** 2)
    dz = np.concatenate([da_i, da_f, da_g, da_o], axis=-1)
    dc_prev = dc * f + da_i * params.w_ic + da_f * params.w_fc
    return dz, dc_prev, dz @ Wr


def _receiver_grad(params: LstmParams, dz: np.ndarray) -> np.ndarray:
    C = params.cell_dim
    k = _RECEIVER_SLOT[params.receiver]
    return dz[..., k * C:(k + 1) * C]


def _peephole_grads(params: LstmParams, dz, c_prev, c):
    C = params.cell_dim
    return (_bsum(dz[..., :C] * c_prev), _bsum(dz[..., C:2 * C] * c_prev),
            _bsum(dz[..., 3 * C:] * c))


def _split_stacked(params: LstmParams, dWx, dWr, db) -> dict[str, np.ndarray]:
    C = params.cell_dim
    out = {}
    for k, gate in enumerate("ifco"):
        rows = slice(k * C, (k + 1) * C)
        out[f"W_{gate}x"] = dWx[rows]
        out[f"W_{gate}r"] = dWr[rows]
        out[f"b_{gate}"] = db[rows]
    return out


def cell_backward(params: LstmParams, cache: StepCache, grad_r, grad_c, grad_p):
    """Reverse one step.

    ``grad_r``, ``grad_c`` and ``grad_p`` are the loss gradients w.r.t. the
    step's r_t, c_t and p_t.  Returns ``(param_grads, grad_x, grad_prev_r,
    grad_prev_c, grad_phon_feat)``; head gradients in ``param_grads`` are
    zero since heads are not part of the step.
    """
    if cache.x is None:
        raise ValueError("cache has no input; it was not produced by cell_forward")
    if cache.x.shape[-1] != params.input_dim or cache.c.shape[-1] != params.cell_dim:
        raise ValueError("cache does not match params dimensions")
    if cache.receiver is not params.receiver:
        raise ValueError("cache receiver does not match params")
    grad_r = np.asarray(grad_r, dtype=np.float64)
    grad_c = np.asarray(grad_c, dtype=np.float64)
    grad_p = np.asarray(grad_p, dtype=np.float64)
    Wx, Wr, _ = params.stacked()
    dz, dc_prev, dr_prev = _step_backward(params, Wr, cache, grad_r, grad_c, grad_p)
    grads = params.zeros_like()
    for name, value in _split_stacked(params, _outer(dz, cache.x), _outer(dz, cache.r_prev),
                                      _bsum(dz)).items():
        setattr(grads, name, value)
    grads.w_ic, grads.w_fc, grads.w_oc = _peephole_grads(params, dz, cache.c_prev, cache.c)
    grads.W_rm = _outer(grad_r, cache.m)
    grads.W_pm = _outer(grad_p, cache.m)
    grad_feat = None
    if params.inj is not None:
        d_recv = _receiver_grad(params, dz)
        grads.inj.W_inj = _outer(d_recv, cache.feat)
        grad_feat = d_recv @ params.inj.W_inj
    return grads, dz @ Wx, dr_prev, dc_prev, grad_feat


# -- whole sequences ---------------------------------------------------------

@dataclass
class SequenceCache:
    X: np.ndarray  # T x B x D
    feats: np.ndarray | None
    steps: list[StepCache]


def forward_sequence(params: LstmParams, X, feats=None) -> tuple[np.ndarray, np.ndarray, SequenceCache]:
    """Run the layer over ``X`` (T x B x D) from a zero state.

    Returns R (T x B x rec_dim), P (T x B x proj_dim) and the cache for
    :func:`backward_sequence`.  Frames are processed strictly in time
    order, so right-padding never affects earlier frames.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError("X must be T x B x D")
    if X.shape[-1] != params.input_dim:
        raise ValueError(f"W_ix expects input dim {params.input_dim}, got {X.shape[-1]}")
    feats = _check_feat(params, feats)
    T, B, _ = X.shape
    Wx, Wr, b = params.stacked()
    ZX = X @ Wx.T + b
    state = CellState.zeros(params, (B,))
    c, r = state.c, state.r
    steps = []
    R = np.empty((T, B, params.rec_dim))
    P = np.empty((T, B, params.proj_dim))
    for t in range(T):
        cache = _step(params, ZX[t], Wr, c, r, None if feats is None else feats[t], None)
        c, r = cache.c, cache.r
        R[t] = r
        P[t] = cache.p
        steps.append(cache)
    return R, P, SequenceCache(X, feats, steps)


def backward_sequence(params: LstmParams, cache: SequenceCache, dR, dP,
                      want_dx: bool = False):
    """Full BPTT given loss gradients w.r.t. every R and P.

    Returns ``(grads, dX, dfeats)``; head gradients in ``grads`` are zero.
    ``dX`` is None unless ``want_dx``; ``dfeats`` is None without injection.
    """
    steps = cache.steps
    T = len(steps)
    Wx, Wr, _ = params.stacked()
    C = params.cell_dim
    B = cache.X.shape[1]
    dZ = np.empty((T, B, 4 * C))
    dR_total = np.empty((T, B, params.rec_dim))
    dr_next = np.zeros((B, params.rec_dim))
    dc_next = np.zeros((B, C))
    for t in range(T - 1, -1, -1):
        dR_total[t] = dR[t] + dr_next
        dZ[t], dc_next, dr_next = _step_backward(params, Wr, steps[t], dR_total[t], dc_next, dP[t])
    # weight gradients as single reductions over all time steps
    M = np.stack([s.m for s in steps])
    R_prev = np.stack([s.r_prev for s in steps])
    C_prev = np.stack([s.c_prev for s in steps])
    C_cur = np.stack([s.c for s in steps])
    grads = params.zeros_like()
    for name, value in _split_stacked(params, _outer(dZ, cache.X), _outer(dZ, R_prev),
                                      _bsum(dZ)).items():
        setattr(grads, name, value)
    grads.w_ic, grads.w_fc, grads.w_oc = _peephole_grads(params, dZ, C_prev, C_cur)
    grads.W_rm = _outer(dR_total, M)
    grads.W_pm = _outer(np.asarray(dP), M)
    dfeats = None
    if params.inj is not None:
        d_recv = _receiver_grad(params, dZ)
        grads.inj.W_inj = _outer(d_recv, cache.feats)
        dfeats = d_recv @ params.inj.W_inj
    dX = dZ @ Wx if want_dx else None
    return grads, dX, dfeats


def params_equal(a: LstmParams, b: LstmParams) -> bool:
    """Bitwise equality of every array and the receiver."""
    if a.receiver is not b.receiver:
        return False
    aa, bb = a.arrays(), b.arrays()
    return aa.keys() == bb.keys() and all(
        aa[k].shape == bb[k].shape and aa[k].tobytes() == bb[k].tobytes() for k in aa)


__all__ = [
    "ReceiverKind", "InjectionParams", "OutputHead", "LstmParams", "CellState", "StepCache",
    "SequenceCache", "init_params", "cell_forward", "output_forward", "cell_backward",
    "forward_sequence", "backward_sequence", "params_equal",
]
