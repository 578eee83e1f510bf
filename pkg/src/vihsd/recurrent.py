"""LSTM / GRU sequence classifiers with exact backpropagation through time.

Everything is plain numpy and batched over the leading axis. Sequences are
post-padded; a boolean mask built from ``true_length`` keeps padding out
of the recurrence entirely (the state is carried through unchanged and no
gradient flows into padded positions).

Gate layout inside the stacked weight matrices (rows of ``U``/``W``/``b``):

    LSTM: [input, forget, output, candidate]
    GRU:  [update, reset, candidate]

LSTM:  i, f, o = sigmoid(U x + W h + b);  g = tanh(U_g x + W_g h + b_g)
       c' = f * c + i * g;  h' = o * tanh(c')
GRU:   z, r = sigmoid(U x + W h + b);  n = tanh(U_n x + W_n (r * h) + b_n)
       h' = (1 - z) * h + z * n
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit as sigmoid

from .corpus import NUM_CLASSES, DataError
from .vocab import PAD_ID, EmbeddingMatrix, TokenSequence

LSTM = "lstm"
GRU = "gru"
FINAL_STATE = "final_state"
MEAN_OVER_TIME = "mean_over_time"
N_GATES = {LSTM: 4, GRU: 3}
CHECKPOINT_MAGIC = b"vihsd-checkpoint v1\n"


@dataclass
class LstmCellParams:
    U: np.ndarray  # (4h, d)
    W: np.ndarray  # (4h, h)
    b: np.ndarray  # (4h,)

    @property
    def hidden_size(self) -> int:
        return self.W.shape[1]


@dataclass
class GruCellParams:
    U: np.ndarray  # (3h, d)
    W: np.ndarray  # (3h, h)
    b: np.ndarray  # (3h,)

    @property
    def hidden_size(self) -> int:
        return self.W.shape[1]


def init_cell(kind: str, input_size: int, hidden_size: int, rng: np.random.Generator):
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, LSTM forget bias 1."""
    g = N_GATES[kind]
    U = rng.uniform(-1, 1, size=(g * hidden_size, input_size)) / np.sqrt(input_size)
    W = rng.uniform(-1, 1, size=(g * hidden_size, hidden_size)) / np.sqrt(hidden_size)
    b = np.zeros(g * hidden_size)
    if kind == LSTM:
        b[hidden_size : 2 * hidden_size] = 1.0
        return LstmCellParams(U, W, b)
    return GruCellParams(U, W, b)


# -- single steps --------------------------------------------------------------

def _lstm_forward(p: LstmCellParams, x, h_prev, c_prev):
    n = p.hidden_size
    z = x @ p.U.T + h_prev @ p.W.T + p.b
    i = sigmoid(z[..., :n])
    f = sigmoid(z[..., n : 2 * n])
    o = sigmoid(z[..., 2 * n : 3 * n])
    g = np.tanh(z[..., 3 * n :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, o, g, tc)


def _lstm_backward(p: LstmCellParams, cache, dh, dc, grads):
    x, h_prev, c_prev, i, f, o, g, tc = cache
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ],
        axis=-1,
    )
    grads["U"] += dz.T @ x
    grads["W"] += dz.T @ h_prev
    grads["b"] += dz.sum(axis=0)
    return dz @ p.U, dz @ p.W, dc * f


def _gru_forward(p: GruCellParams, x, h_prev, c_prev=None):
    n = p.hidden_size
    ax = x @ p.U.T + p.b
    ah = h_prev @ p.W[: 2 * n].T
    z = sigmoid(ax[..., :n] + ah[..., :n])
    r = sigmoid(ax[..., n : 2 * n] + ah[..., n:])
    rh = r * h_prev
    cand = np.tanh(ax[..., 2 * n :] + rh @ p.W[2 * n :].T)
    h = (1.0 - z) * h_prev + z * cand
    return h, None, (x, h_prev, z, r, rh, cand)


def _gru_backward(p: GruCellParams, cache, dh, dc, grads):
    x, h_prev, z, r, rh, cand = cache
    n = p.hidden_size
    da_n = dh * z * (1.0 - cand * cand)
    drh = da_n @ p.W[2 * n :]
    da_z = dh * (cand - h_prev) * z * (1.0 - z)
    da_r = drh * h_prev * r * (1.0 - r)
    da_zr = np.concatenate([da_z, da_r], axis=-1)
    dz_all = np.concatenate([da_zr, da_n], axis=-1)
    grads["U"] += dz_all.T @ x
    grads["W"][: 2 * n] += da_zr.T @ h_prev
    grads["W"][2 * n :] += da_n.T @ rh
    grads["b"] += dz_all.sum(axis=0)
    dh_prev = dh * (1.0 - z) + drh * r + da_zr @ p.W[: 2 * n]
    return dz_all @ p.U, dh_prev, None


def lstm_step(params: LstmCellParams, x_t, h_prev, c_prev):
    """One LSTM update; returns ``(h_t, c_t)``. Works on vectors or row batches."""
    h, c, _ = _lstm_forward(params, np.asarray(x_t), np.asarray(h_prev), np.asarray(c_prev))
    return h, c


def gru_step(params: GruCellParams, x_t, h_prev):
    h, _, _ = _gru_forward(params, np.asarray(x_t), np.asarray(h_prev))
    return h


_STEP = {LSTM: (_lstm_forward, _lstm_backward), GRU: (_gru_forward, _gru_backward)}


# -- model ---------------------------------------------------------------------

@dataclass
class ForwardCache:
    descriptor: dict
    ids: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    embedded: np.ndarray
    steps: dict  # direction -> list of (t, step cache)
    states: dict  # direction -> (B, T, h) state after each step
    pooled: np.ndarray
    probs: np.ndarray
    shapes: dict = field(default_factory=dict)


class RecurrentClassifier:
    """Embedding -> (Bi)LSTM/GRU -> pooling -> dense softmax over three classes.

    Parameters live in ``self.params`` under the names ``embedding``,
    ``fwd.U``, ``fwd.W``, ``fwd.b``, ``bwd.*`` (bidirectional only),
    ``head.W`` and ``head.b``.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        cell_kind: str = LSTM,
        bidirectional: bool = True,
        pooling: str = FINAL_STATE,
        trainable_embedding: bool = True,
    ):
        if cell_kind not in N_GATES:
            raise ValueError(f"unknown cell kind {cell_kind!r}")
        if pooling not in (FINAL_STATE, MEAN_OVER_TIME):
            raise ValueError(f"unknown pooling {pooling!r}")
        self.params = params
        self.cell_kind = cell_kind
        self.bidirectional = bidirectional
        self.pooling = pooling
        self.trainable_embedding = trainable_embedding
        self._validate()

    @classmethod
    def create(
        cls,
        embedding: EmbeddingMatrix | np.ndarray,
        cell_kind: str = LSTM,
        hidden_size: int = 128,
        bidirectional: bool = True,
        pooling: str = FINAL_STATE,
        trainable_embedding: bool = True,
        seed: int = 0,
    ) -> "RecurrentClassifier":
        matrix = embedding.matrix if isinstance(embedding, EmbeddingMatrix) else embedding
        matrix = np.array(matrix, dtype=float)
        rng = np.random.default_rng(seed)
        params = {"embedding": matrix}
        directions = ("fwd", "bwd") if bidirectional else ("fwd",)
        for name in directions:
            cell = init_cell(cell_kind, matrix.shape[1], hidden_size, rng)
            params[f"{name}.U"], params[f"{name}.W"], params[f"{name}.b"] = cell.U, cell.W, cell.b
        H = hidden_size * len(directions)
        params["head.W"] = rng.uniform(-1, 1, size=(NUM_CLASSES, H)) / np.sqrt(H)
        params["head.b"] = np.zeros(NUM_CLASSES)
        return cls(params, cell_kind, bidirectional, pooling, trainable_embedding)

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)

    @property
    def hidden_size(self) -> int:
        return self.params["fwd.W"].shape[1]

    @property
    def input_size(self) -> int:
        return self.params["embedding"].shape[1]

    @property
    def vocab_size(self) -> int:
        return self.params["embedding"].shape[0]

    @property
    def dtype(self):
        return self.params["head.W"].dtype

    def descriptor(self) -> dict:
        return {
            "cell_kind": self.cell_kind,
            "bidirectional": self.bidirectional,
            "pooling": self.pooling,
            "hidden_size": self.hidden_size,
            "input_size": self.input_size,
            "vocab_size": self.vocab_size,
            "trainable_embedding": self.trainable_embedding,
        }

    def trainable_names(self) -> list[str]:
        return [k for k in self.params if k != "embedding" or self.trainable_embedding]

    def cell(self, direction: str):
        cls = LstmCellParams if self.cell_kind == LSTM else GruCellParams
        return cls(*(self.params[f"{direction}.{k}"] for k in "UWb"))

    def astype(self, dtype) -> "RecurrentClassifier":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return RecurrentClassifier(params, self.cell_kind, self.bidirectional, self.pooling, self.trainable_embedding)

    def copy(self) -> "RecurrentClassifier":
        return copy.deepcopy(self)

    def _validate(self) -> None:
        h = self.params["fwd.W"].shape[1]
        d = self.params["embedding"].shape[1]
        g = N_GATES[self.cell_kind]
        for name in self.directions:
            shapes = tuple(self.params[f"{name}.{k}"].shape for k in "UWb")
            if shapes != ((g * h, d), (g * h, h), (g * h,)):
                raise ValueError(f"{name} cell has inconsistent shapes {shapes}")
        H = h * len(self.directions)
        if self.params["head.W"].shape != (NUM_CLASSES, H) or self.params["head.b"].shape != (NUM_CLASSES,):
            raise ValueError("head must map the pooled state to exactly three classes")

    # -- forward / backward ------------------------------------------------

    def forward_batch(self, ids: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        """Class probabilities ``(B, 3)`` for post-padded id rows."""
        ids = np.asarray(ids, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        if ids.ndim != 2 or len(lengths) != ids.shape[0]:
            raise ValueError("ids must be (B, T) with one length per row")
        if np.any(lengths < 0) or np.any(lengths > ids.shape[1]):
            raise ValueError("lengths must lie in [0, T]")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError("token id outside the embedding matrix")
        T = int(lengths.max()) if len(lengths) else 0
        ids = ids[:, :T]
        B, h = ids.shape[0], self.hidden_size
        mask = np.arange(T)[None, :] < lengths[:, None]
        emb = self.params["embedding"][ids]
        step_fwd, _ = _STEP[self.cell_kind]
        steps, states, finals = {}, {}, []
        for name in self.directions:
            p = self.cell(name)
            hs = np.zeros((B, h), dtype=self.dtype)
            cs = np.zeros((B, h), dtype=self.dtype)
            out = np.zeros((B, T, h), dtype=self.dtype)
            order = range(T) if name == "fwd" else range(T - 1, -1, -1)
            record = []
            for t in order:
                m = mask[:, t, None]
                h_new, c_new, sc = step_fwd(p, emb[:, t], hs, cs)
                hs = np.where(m, h_new, hs)
                if c_new is not None:
                    cs = np.where(m, c_new, cs)
                out[:, t] = hs
                record.append((t, sc))
            steps[name], states[name] = record, out
            finals.append(hs)
        if self.pooling == FINAL_STATE:
            pooled = np.concatenate(finals, axis=1)
        else:
            denom = np.maximum(lengths, 1)[:, None].astype(self.dtype)
            pooled = np.concatenate(
                [np.where(mask[:, :, None], states[n], 0.0).sum(axis=1) / denom for n in self.directions], axis=1
            )
        logits = pooled @ self.params["head.W"].T + self.params["head.b"]
        probs = softmax(logits)
        cache = ForwardCache(
            self.descriptor(), ids, mask, lengths, emb, steps, states, pooled, probs,
            {k: v.shape for k, v in self.params.items()},
        )
        return probs, cache

    def backward_batch(self, cache: ForwardCache, gold, sample_weight=None) -> tuple[float, dict[str, np.ndarray]]:
        """Mean weighted cross-entropy over the batch and its exact gradients."""
        if cache.descriptor != self.descriptor() or cache.shapes != {k: v.shape for k, v in self.params.items()}:
            raise ValueError("forward cache does not belong to this model")
        gold = np.asarray(gold, dtype=np.int64)
        B = cache.probs.shape[0]
        if gold.shape != (B,):
            raise ValueError("need exactly one gold label per batch row")
        sw = np.ones(B, dtype=self.dtype) if sample_weight is None else np.asarray(sample_weight, dtype=self.dtype)
        rows = np.arange(B)
        p_gold = np.maximum(cache.probs[rows, gold], 1e-12)
        loss = float(-np.sum(sw * np.log(p_gold)) / B) if B else 0.0

        grads = {k: np.zeros_like(self.params[k]) for k in self.trainable_names()}
        dlogits = cache.probs.copy()
        dlogits[rows, gold] -= 1.0
        dlogits *= (sw / B)[:, None]
        grads["head.W"] += dlogits.T @ cache.pooled
        grads["head.b"] += dlogits.sum(axis=0)
        dpooled = dlogits @ self.params["head.W"]

        h = self.hidden_size
        _, step_bwd = _STEP[self.cell_kind]
        demb = np.zeros_like(cache.embedded)
        for k, name in enumerate(self.directions):
            p = self.cell(name)
            dslice = dpooled[:, k * h : (k + 1) * h]
            cell_grads = {"U": grads.setdefault(f"{name}.U", np.zeros_like(p.U)),
                          "W": grads.setdefault(f"{name}.W", np.zeros_like(p.W)),
                          "b": grads.setdefault(f"{name}.b", np.zeros_like(p.b))}
            if self.pooling == FINAL_STATE:
                dh = dslice.copy()
                dstate = None
            else:
                dh = np.zeros_like(dslice)
                denom = np.maximum(cache.lengths, 1)[:, None].astype(self.dtype)
                dstate = dslice / denom
            dc = np.zeros_like(dh)
            for t, sc in reversed(cache.steps[name]):
                m = cache.mask[:, t, None]
                if dstate is not None:
                    dh = dh + np.where(m, dstate, 0.0)
                dx, dh_prev, dc_prev = step_bwd(p, sc, np.where(m, dh, 0.0), np.where(m, dc, 0.0), cell_grads)
                dh = dh_prev + np.where(m, 0.0, dh)
                if dc_prev is not None:
                    dc = dc_prev + np.where(m, 0.0, dc)
                demb[:, t] += np.where(m, dx, 0.0)
        if self.trainable_embedding:
            valid = cache.mask
            np.add.at(grads["embedding"], cache.ids[valid], demb[valid])
            grads["embedding"][PAD_ID] = 0.0
        return loss, grads

    def predict_proba(self, ids: np.ndarray, lengths: np.ndarray, batch_size: int = 256) -> np.ndarray:
        out = [self.forward_batch(ids[s : s + batch_size], lengths[s : s + batch_size])[0]
               for s in range(0, len(lengths), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, NUM_CLASSES), dtype=self.dtype)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(seq: TokenSequence):
    return np.asarray(seq.ids)[None, :], np.array([seq.true_length])


def forward(model: RecurrentClassifier, seq: TokenSequence) -> tuple[np.ndarray, ForwardCache]:
    probs, cache = model.forward_batch(*_as_batch(seq))
    return probs[0], cache


def backward(model: RecurrentClassifier, cache: ForwardCache, gold: int) -> dict[str, np.ndarray]:
    """Gradients of ``-ln p[gold]`` for the single sequence in ``cache``."""
    if cache.probs.shape[0] != 1:
        raise ValueError("backward expects the cache of a single-sequence forward call")
    return model.backward_batch(cache, [gold])[1]


def sequence_loss(model: RecurrentClassifier, seq: TokenSequence, gold: int) -> float:
    probs, _ = forward(model, seq)
    return float(-np.log(max(probs[gold], 1e-12)))


def grad_check(model: RecurrentClassifier, example, epsilon: float = 1e-5, gradients=None) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``example`` is ``(TokenSequence, gold)``. Analytic gradients come from a
    float64 copy of the model (``gradients`` overrides them). The perturbed
    losses are evaluated in extended precision so that rounding in the loss
    does not swamp small gradient entries.
    """
    seq, gold = example
    model = model.astype(np.float64)
    if gradients is None:
        _, cache = forward(model, seq)
        gradients = backward(model, cache, gold)
    probe = model.astype(np.longdouble)
    worst = 0.0
    for name, analytic in gradients.items():
        param = probe.params[name]
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + epsilon
            up = _extended_loss(probe, seq, gold)
            param[idx] = orig - epsilon
            down = _extended_loss(probe, seq, gold)
            param[idx] = orig
            numeric = float((up - down) / (2 * np.longdouble(epsilon)))
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst


def _extended_loss(model: RecurrentClassifier, seq: TokenSequence, gold: int):
    probs, _ = forward(model, seq)
    return -np.log(probs[gold])


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(model: RecurrentClassifier, path: str | Path) -> None:
    """Binary layout: magic line, 8-byte little-endian header length, JSON header, raw tensors.

    The header holds the architecture descriptor and, per tensor, its name,
    dtype and shape; tensor bytes follow in header order, C-contiguous,
    little-endian.
    """
    names = list(model.params)
    header = {
        "descriptor": model.descriptor(),
        "tensors": [
            {"name": n, "dtype": model.params[n].dtype.str.lstrip("<>|="), "shape": list(model.params[n].shape)}
            for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            arr = model.params[n]
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path: str | Path) -> RecurrentClassifier:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a v1 checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<Q", data[pos : pos + 8])
    pos += 8
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    params = {}
    for spec in header["tensors"]:
        dtype = np.dtype("<" + spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(spec["shape"])
        params[spec["name"]] = arr.astype(dtype.newbyteorder("="))
        pos += count * dtype.itemsize
    d = header["descriptor"]
    model = RecurrentClassifier(params, d["cell_kind"], d["bidirectional"], d["pooling"], d["trainable_embedding"])
    if model.descriptor() != d:
        raise DataError(f"{path}: tensors disagree with the architecture descriptor")
    return model
