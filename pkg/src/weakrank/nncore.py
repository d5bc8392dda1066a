"""Small feed-forward network engine with hand-written backpropagation.

Everything is float64. Parameters live in plain ``dict[str, np.ndarray]`` so
that the optimizer, the checkpoint writer and the gradient checks can treat
all of them uniformly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .io import atomic_write

ACTIVATIONS = ("relu", "linear", "tanh", "sigmoid")


def sigmoid(x):
    x = np.asarray(x, np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(name: str, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "linear":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, z, a):
    """Derivative of the activation, given pre-activation ``z`` and output ``a``."""
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "linear":
        return np.ones_like(z)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"unknown activation {name!r}")


def glorot_uniform(rng, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class StaleCacheError(RuntimeError):
    pass


class SharedRowMatrix:
    """Sparse rows plus one row added to every one of them.

    Used for inputs where a large block is identical across the batch, so the
    first layer multiplies that block once instead of once per row.
    """

    def __init__(self, rows: sp.csr_matrix, shared: sp.csr_matrix):
        if shared.shape != (1, rows.shape[1]):
            raise ValueError("shared row must be 1 x width")
        self.rows = rows
        self.shared = shared

    @property
    def shape(self):
        return self.rows.shape

    def tocsr(self) -> sp.csr_matrix:
        n = self.rows.shape[0]
        full = self.rows + sp.vstack([self.shared] * n, format="csr") if n else self.rows
        full = sp.csr_matrix(full)
        full.sort_indices()
        return full


class MLP:
    """Dense layers ``z_i = act(W_i z_{i-1} + b_i)``, ReLU hidden units,
    configurable output activation, inverted dropout on hidden units."""

    def __init__(self, sizes, output_activation="linear", dropout=0.0, rng=None, prefix="mlp"):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {output_activation!r}")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.sizes = [int(s) for s in sizes]
        self.output_activation = output_activation
        self.dropout = float(dropout)
        self.prefix = prefix
        self.generation = 0
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {}
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.params[self._w(i)] = glorot_uniform(rng, fan_out, fan_in)
            self.params[self._b(i)] = np.zeros(fan_out)

    def _w(self, i):
        return f"{self.prefix}.W{i}"

    def _b(self, i):
        return f"{self.prefix}.b{i}"

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def activation(self, i: int) -> str:
        return self.output_activation if i == self.n_layers - 1 else "relu"

    def first_layer(self, X):
        """Pre-activation of the first layer, ``X W0^T + b0``; X may be sparse."""
        W = self.params[self._w(0)]
        if X.shape[1] != W.shape[1]:
            raise ValueError(f"input width {X.shape[1]} != expected {W.shape[1]}")
        if isinstance(X, SharedRowMatrix):
            Z = np.asarray(X.rows @ W.T) + np.asarray(X.shared @ W.T)
            return Z + self.params[self._b(0)]
        Z = X @ W.T
        if sp.issparse(Z):
            Z = Z.toarray()
        return np.asarray(Z) + self.params[self._b(0)]

    def forward(self, X, train=False, rng=None):
        """Return ``(outputs of shape (B,), cache)``.

        In train mode hidden units are dropped with probability ``dropout`` and
        survivors scaled by ``1/(1-dropout)``; ``rng`` supplies the masks.
        """
        return self.forward_from_first(self.first_layer(X), train, rng, X)

    def forward_from_first(self, Z0, train=False, rng=None, X=None):
        if train and self.dropout > 0 and rng is None:
            raise ValueError("train-mode dropout needs an rng")
        zs, acts, masks = [], [], []
        Z = Z0
        for i in range(self.n_layers):
            if i > 0:
                Z = acts[-1] @ self.params[self._w(i)].T + self.params[self._b(i)]
            A = activate(self.activation(i), Z)
            mask = None
            if i < self.n_layers - 1 and train and self.dropout > 0:
                keep = rng.random(A.shape) >= self.dropout
                mask = keep / (1.0 - self.dropout)
                A = A * mask
            zs.append(Z)
            acts.append(A)
            masks.append(mask)
        cache = {"X": X, "zs": zs, "acts": acts, "masks": masks, "generation": self.generation,
                 "owner": id(self)}
        return acts[-1][:, 0], cache

    def backward(self, cache, dout, input_grad=False):
        """Gradients of ``sum(dout * outputs)`` with respect to every parameter.

        Returns ``(grads, dX)``; ``dX`` is only computed when ``input_grad``.
        """
        if cache.get("owner") != id(self) or cache.get("generation") != self.generation:
            raise StaleCacheError("forward cache does not match the current parameters")
        if cache.get("used"):
            raise StaleCacheError("forward cache already consumed")
        cache["used"] = True
        zs, acts, masks, X = cache["zs"], cache["acts"], cache["masks"], cache["X"]
        grads = {}
        dA = np.asarray(dout, np.float64).reshape(-1, 1)
        dX = None
        for i in reversed(range(self.n_layers)):
            if masks[i] is not None:
                dA = dA * masks[i]
            a_nodrop = activate(self.activation(i), zs[i]) if masks[i] is not None else acts[i]
            dZ = dA * activation_grad(self.activation(i), zs[i], a_nodrop)
            W = self.params[self._w(i)]
            if i > 0:
                grads[self._w(i)] = dZ.T @ acts[i - 1]
            else:
                if isinstance(X, SharedRowMatrix):
                    g = np.asarray((X.rows.T @ dZ).T)
                    g += np.outer(dZ.sum(axis=0), X.shared.toarray().ravel())
                    grads[self._w(i)] = g
                elif sp.issparse(X):
                    grads[self._w(i)] = np.asarray((X.T @ dZ).T)
                else:
                    grads[self._w(i)] = dZ.T @ X
            grads[self._b(i)] = dZ.sum(axis=0)
            if i > 0:
                dA = dZ @ W
            elif input_grad:
                dX = dZ @ W
        return grads, dX


def softmax_weights(raw) -> np.ndarray:
    """Numerically stable softmax of the raw term weights of one field."""
    raw = np.asarray(raw, np.float64)
    if raw.size == 0:
        raise ValueError("need at least one weight")
    e = np.exp(raw - raw.max())
    return e / e.sum()


WEIGHTINGS = ("learned", "uniform", "idf")
EMBEDDING_SOURCES = ("learned", "pretrained-frozen", "pretrained-init")


class EmptyFieldError(ValueError):
    """A text field has no in-vocabulary terms left to compose."""


class EmbeddingTable:
    """Term embeddings E (|V| x m) and raw term weights W (|V|), composed as a
    normalized weighted sum of the embeddings of a field's terms."""

    def __init__(self, vocab_size, dim, weighting="learned", idf=None, train_embeddings=True,
                 rng=None, prefix="emb"):
        if weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {weighting!r}")
        if weighting == "idf" and idf is None:
            raise ValueError("idf weighting needs idf values")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab_size = int(vocab_size)
        self.dim = int(dim)
        self.weighting = weighting
        self.train_embeddings = train_embeddings
        self.prefix = prefix
        self.idf = None if idf is None else np.asarray(idf, np.float64)
        self.E = rng.uniform(-0.05, 0.05, size=(self.vocab_size, self.dim))
        self.W = np.zeros(self.vocab_size)

    @property
    def params(self) -> dict:
        out = {}
        if self.train_embeddings:
            out[f"{self.prefix}.E"] = self.E
        if self.weighting == "learned":
            out[f"{self.prefix}.W"] = self.W
        return out

    @property
    def state(self) -> dict:
        """Everything needed to restore the table, trainable or not."""
        return {f"{self.prefix}.E": self.E, f"{self.prefix}.W": self.W}

    def normalized_weights(self, fields: sp.csr_matrix) -> sp.csr_matrix:
        """Per-row normalized term weights, same sparsity as ``fields`` (term counts)."""
        counts = fields.data
        cols = fields.indices
        indptr = fields.indptr
        if np.any(np.diff(indptr) == 0):
            raise EmptyFieldError("field without in-vocabulary terms")
        starts = indptr[:-1]
        rows = np.repeat(np.arange(fields.shape[0]), np.diff(indptr))
        if self.weighting == "learned":
            logits = self.W[cols]
            rowmax = np.maximum.reduceat(logits, starts)
            raw = counts * np.exp(logits - rowmax[rows])
        elif self.weighting == "uniform":
            raw = counts.astype(np.float64)
        else:
            raw = counts * self.idf[cols]
        total = np.add.reduceat(raw, starts)
        return sp.csr_matrix((raw / total[rows], cols, indptr), shape=fields.shape)

    def compose(self, fields: sp.csr_matrix):
        """Compose a batch of fields (rows of term counts) into ``(B, m)`` vectors."""
        Wh = self.normalized_weights(fields)
        V = np.asarray(Wh @ self.E)
        return V, {"Wh": Wh, "V": V}

    def backward(self, cache, dV) -> dict:
        Wh, V = cache["Wh"], cache["V"]
        grads = {}
        if self.train_embeddings:
            grads[f"{self.prefix}.E"] = np.asarray(Wh.T @ dV)
        if self.weighting == "learned":
            indptr = Wh.indptr
            rows = np.repeat(np.arange(Wh.shape[0]), np.diff(indptr))
            cols = Wh.indices
            term_dot = np.einsum("ij,ij->i", self.E[cols], dV[rows])
            field_dot = np.einsum("ij,ij->i", V, dV)
            dlogit = Wh.data * (term_dot - field_dot[rows])
            grads[f"{self.prefix}.W"] = np.bincount(cols, weights=dlogit, minlength=self.vocab_size)
        return grads


def fields_matrix(term_lists, vocab_size) -> sp.csr_matrix:
    """Rows of term counts, column indices ascending, from lists of term ids."""
    indptr = [0]
    cols, data = [], []
    for terms in term_lists:
        t = np.asarray(terms, np.int64)
        t = t[t >= 0]
        u, c = np.unique(t, return_counts=True)
        cols.append(u)
        data.append(c.astype(np.float64))
        indptr.append(indptr[-1] + u.size)
    cols_a = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    data_a = np.concatenate(data) if data else np.zeros(0)
    return sp.csr_matrix((data_a, cols_a, np.asarray(indptr)), shape=(len(indptr) - 1, vocab_size))


def compose_field(term_ids, table: EmbeddingTable) -> np.ndarray:
    """Weighted sum of the embeddings of one field's terms (OOV ids skipped)."""
    V, _ = table.compose(fields_matrix([term_ids], table.vocab_size))
    return V[0]


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        """In-place bias-corrected Adam update of every parameter that has a gradient."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            p = params[k]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: Adam, params: dict, grads: dict) -> dict:
    state.step(params, grads)
    return params


CKPT_MAGIC = b"WRCK1"


def save_checkpoint(path, header: dict, arrays: dict) -> None:
    """Binary checkpoint: magic, u32 header length, JSON header, float64 LE blobs."""
    names = sorted(arrays)
    header = dict(header)
    header["arrays"] = [[n, list(arrays[n].shape)] for n in names]
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<I", len(hb)), hb]
    for n in names:
        parts.append(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())
    atomic_write(path, b"".join(parts))


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if buf[:5] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a WRCK1 checkpoint")
    (hl,) = struct.unpack_from("<I", buf, 5)
    header = json.loads(buf[9:9 + hl].decode("utf-8"))
    pos = 9 + hl
    arrays = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * n
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return header, arrays
