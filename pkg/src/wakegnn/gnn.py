"""Message-passing layers and full surrogate models.

Four variants share one interface: plain GraphSAGE with mean aggregation,
GraphSAGE with jumping-knowledge and residual connections, GCN, and
multi-head GAT. Aggregations run through sparse matrices; gradients are
hand-derived per layer and returned for every parameter block.

Layer parameter names follow "layer<k>.w" / "layer<k>.b" (plus
"layer<k>.att" for GAT), then "jk.w"/"jk.b" when jumping knowledge is
present, then "head.w"/"head.b".
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError
from .meshgraph import N_FEATURES, Graph
from .nncore import (LinearParams, init_params, linear_backward,
                     linear_forward, relu_backward, relu_forward)

_VARIANTS = ("sage", "sage_jk_res", "gcn", "gat")
_LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    alpha scales the initial-residual term (first-layer embedding), beta the
    previous-layer term; both apply only to the sage_jk_res variant.
    """

    variant: str = "sage_jk_res"
    n_layers: int = 6
    hidden: int = 128
    out_channels: int = 4
    alpha: float = 0.1
    beta: float = 0.9
    gat_heads: int = 4
    fanout: tuple[int, ...] | None = None
    jk_mode: str = "concat"

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}', "
                              f"expected one of {_VARIANTS}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.hidden <= 0 or self.out_channels <= 0:
            raise ConfigError("hidden and out_channels must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.variant == "gat":
            if self.gat_heads < 1:
                raise ConfigError("gat_heads must be >= 1")
            if self.hidden % self.gat_heads:
                raise ConfigError(
                    f"hidden ({self.hidden}) must be divisible by "
                    f"gat_heads ({self.gat_heads})")
        if self.fanout is not None:
            if len(self.fanout) != self.n_layers:
                raise ConfigError("fanout must list one size per layer")
            if any(f < 1 for f in self.fanout):
                raise ConfigError("fanout entries must be >= 1")
        if self.jk_mode != "concat":
            raise ConfigError("only jk_mode='concat' is supported")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "n_layers": self.n_layers,
                "hidden": self.hidden, "out_channels": self.out_channels,
                "alpha": self.alpha, "beta": self.beta,
                "gat_heads": self.gat_heads,
                "fanout": list(self.fanout) if self.fanout else None,
                "jk_mode": self.jk_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("fanout") is not None:
            d["fanout"] = tuple(d["fanout"])
        return cls(**d)


# ---------------------------------------------------------------------------
# segment helpers over CSR-style (offsets, values-per-edge) data


def _seg_ids(offsets: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(offsets.size - 1), np.diff(offsets))


def _segment_sum(x: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(ids, weights=x, minlength=n)


def _segment_max(x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    n = offsets.size - 1
    out = np.full(n, -np.inf)
    nonempty = np.diff(offsets) > 0
    if x.size:
        out[nonempty] = np.maximum.reduceat(x, offsets[:-1][nonempty])
    return out


def _segment_softmax(scores: np.ndarray, offsets: np.ndarray,
                     ids: np.ndarray) -> np.ndarray:
    n = offsets.size - 1
    shifted = scores - _segment_max(scores, offsets)[ids]
    e = np.exp(shifted)
    denom = _segment_sum(e, ids, n)
    return e / denom[ids]


# ---------------------------------------------------------------------------
# adjacency operators


def _mean_operator(offsets: np.ndarray, neighbors: np.ndarray, n: int,
                   dtype=np.float64) -> sp.csr_matrix:
    """Row v averages over its (possibly sampled) neighborhood."""
    deg = np.diff(offsets)
    inv = np.zeros(n, dtype=dtype)
    np.divide(1.0, deg, out=inv, where=deg > 0)
    data = np.repeat(inv, deg)
    return sp.csr_matrix((data, neighbors, offsets), shape=(n, n))


def _gcn_operator(g: Graph, dtype=np.float64) -> sp.csr_matrix:
    """Symmetric-normalized adjacency with self-loops added."""
    n = g.n_vertices
    rows = np.concatenate([_seg_ids(g.csr_offsets), np.arange(n)])
    cols = np.concatenate([g.csr_neighbors, np.arange(n)])
    d = g.degrees() + 1.0
    data = (1.0 / np.sqrt(d[rows] * d[cols])).astype(dtype, copy=False)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


# graphs are immutable, so their aggregation operators can be reused across
# steps; entries are keyed by object identity and validated with a weakref
_OP_CACHE: dict[tuple[int, str, str], tuple] = {}
_OP_CACHE_MAX = 8


def _graph_operator(g: Graph, kind: str, dtype) -> sp.csr_matrix:
    key = (id(g), kind, np.dtype(dtype).char)
    hit = _OP_CACHE.get(key)
    if hit is not None and hit[0]() is g:
        return hit[1]
    if kind == "mean":
        op = _mean_operator(g.csr_offsets, g.csr_neighbors, g.n_vertices,
                            dtype=dtype)
    else:
        op = _gcn_operator(g, dtype=dtype)
    if len(_OP_CACHE) >= _OP_CACHE_MAX:
        _OP_CACHE.clear()
    _OP_CACHE[key] = (weakref.ref(g), op)
    return op


def _augment_self(offsets: np.ndarray, neighbors: np.ndarray,
                  n: int) -> tuple[np.ndarray, np.ndarray]:
    """Prepend each vertex itself to its neighbor segment."""
    deg = np.diff(offsets)
    new_off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg + 1, out=new_off[1:])
    new_nbr = np.empty(int(offsets[-1]) + n, dtype=np.int64)
    starts = new_off[:-1]
    new_nbr[starts] = np.arange(n)
    mask = np.ones(new_nbr.size, dtype=bool)
    mask[starts] = False
    new_nbr[mask] = neighbors
    return new_off, new_nbr


# ---------------------------------------------------------------------------
# neighbor sampling


def neighbor_sample(g: Graph, fanouts: tuple[int, ...] | list[int],
                    seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per layer: (offsets, neighbors) with min(fanout, degree) distinct
    neighbors per vertex, drawn without replacement, deterministic per seed.
    """
    if any(f < 1 for f in fanouts):
        raise ConfigError("fanout entries must be >= 1")
    rng = np.random.default_rng(seed)
    n = g.n_vertices
    deg = g.degrees()
    ids = _seg_ids(g.csr_offsets)
    within = np.arange(g.csr_neighbors.size) - g.csr_offsets[:-1][ids]
    out = []
    for fanout in fanouts:
        if np.all(deg <= fanout):
            out.append((g.csr_offsets, g.csr_neighbors))
            continue
        keys = rng.random(g.csr_neighbors.size)
        order = np.lexsort((keys, ids))
        shuffled = g.csr_neighbors[order]
        keep = within < np.minimum(deg, fanout)[ids]
        new_deg = np.minimum(deg, fanout)
        new_off = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(new_deg, out=new_off[1:])
        out.append((new_off, shuffled[keep]))
    return out


# ---------------------------------------------------------------------------
# layer kernels: each _*_fwd returns (out, cache); _*_bwd consumes the cache
# and the upstream gradient, returning (grad_h, {param grads})


def _check_h(h: np.ndarray, g: Graph) -> None:
    if h.ndim != 2 or h.shape[0] != g.n_vertices:
        raise DataError(
            f"embedding rows {h.shape} do not match {g.n_vertices} vertices")


def _sage_fwd(h, g, p: LinearParams, sampled=None, activate=True, op=None):
    _check_h(h, g)
    d = h.shape[1]
    if p.in_dim != 2 * d:
        raise DataError(
            f"sage weight expects {p.in_dim} inputs, concat gives {2 * d}")
    if op is None:
        offsets, neighbors = sampled if sampled is not None \
            else (g.csr_offsets, g.csr_neighbors)
        op = _mean_operator(offsets, neighbors, g.n_vertices, dtype=h.dtype)
    agg = op @ h
    # the weight acts on [h | mean(h)]; splitting it avoids materializing
    # the concatenation
    z = h @ p.W[:d] + agg @ p.W[d:] + p.b
    out = relu_forward(z) if activate else z
    cache = {"h": h, "agg": agg, "z": z, "op": op, "p": p,
             "activate": activate, "dim": d}
    return out, cache


def _sage_bwd(cache, grad_out):
    g_z = relu_backward(cache["z"], grad_out) if cache["activate"] \
        else grad_out
    d, W = cache["dim"], cache["p"].W
    g_w = np.concatenate([cache["h"].T @ g_z, cache["agg"].T @ g_z], axis=0)
    g_b = g_z.sum(axis=0)
    grad_h = g_z @ W[:d].T + cache["op"].T @ (g_z @ W[d:].T)
    return grad_h, {"w": g_w, "b": g_b}


def _sage_res_fwd(h, h0, g, p, alpha, beta, sampled=None, op=None):
    if h.shape != h0.shape:
        raise DataError("residual inputs h and h0 must share a shape")
    sage_out, cache = _sage_fwd(h, g, p, sampled=sampled, activate=True,
                                op=op)
    cache["alpha"] = alpha
    cache["beta"] = beta
    return sage_out + alpha * h0 + beta * h, cache


def _sage_res_bwd(cache, grad_out):
    grad_h, grads = _sage_bwd(cache, grad_out)
    grad_h = grad_h + cache["beta"] * grad_out
    grad_h0 = cache["alpha"] * grad_out
    return grad_h, grad_h0, grads


def _gcn_fwd(h, g, p: LinearParams, activate=True, op=None):
    _check_h(h, g)
    if h.shape[1] != p.in_dim:
        raise DataError(
            f"gcn weight expects {p.in_dim} inputs, got {h.shape[1]}")
    if op is None:
        op = _gcn_operator(g, dtype=h.dtype)
    # bias is added once per vertex, after the normalized aggregation
    z = op @ (h @ p.W) + p.b
    out = relu_forward(z) if activate else z
    cache = {"h": h, "z": z, "op": op, "p": p, "activate": activate}
    return out, cache


def _gcn_bwd(cache, grad_out):
    g_z = relu_backward(cache["z"], grad_out) if cache["activate"] \
        else grad_out
    g_hw = cache["op"].T @ g_z
    grad_h = g_hw @ cache["p"].W.T
    g_w = cache["h"].T @ g_hw
    g_b = g_z.sum(axis=0)
    return grad_h, {"w": g_w, "b": g_b}


def _gat_fwd(h, g, p: LinearParams, att: np.ndarray, include_self=True,
             activate=True):
    """Multi-head additive attention.

    att has shape (heads, 2*d_head): per head, the first half scores the
    destination embedding, the second half the source.
    """
    _check_h(h, g)
    if h.shape[1] != p.in_dim:
        raise DataError(
            f"gat weight expects {p.in_dim} inputs, got {h.shape[1]}")
    heads, two_dh = att.shape
    dh = two_dh // 2
    if p.out_dim != heads * dh:
        raise DataError("attention shape inconsistent with weight matrix")
    n = g.n_vertices
    if include_self:
        offsets, neighbors = _augment_self(g.csr_offsets, g.csr_neighbors, n)
    else:
        offsets, neighbors = g.csr_offsets, g.csr_neighbors
    ids = _seg_ids(offsets)
    m = h @ p.W
    z = np.empty((n, heads * dh), dtype=m.dtype)
    head_caches = []
    for k in range(heads):
        mk = m[:, k * dh:(k + 1) * dh]
        a_dst, a_src = att[k, :dh], att[k, dh:]
        raw = mk[ids] @ a_dst + mk[neighbors] @ a_src
        scores = np.where(raw > 0, raw, _LEAKY_SLOPE * raw)
        alpha = _segment_softmax(scores, offsets, ids)
        aw = sp.csr_matrix((alpha, neighbors, offsets), shape=(n, n))
        z[:, k * dh:(k + 1) * dh] = aw @ mk
        head_caches.append({"alpha": alpha, "raw": raw, "aw": aw})
    z = z + p.b
    out = relu_forward(z) if activate else z
    cache = {"h": h, "m": m, "z": z, "p": p, "att": att, "dh": dh,
             "ids": ids, "neighbors": neighbors, "offsets": offsets,
             "heads": head_caches, "activate": activate}
    return out, cache


def _gat_bwd(cache, grad_out):
    p, att = cache["p"], cache["att"]
    ids, nbr = cache["ids"], cache["neighbors"]
    dh = cache["dh"]
    n = cache["h"].shape[0]
    g_z = relu_backward(cache["z"], grad_out) if cache["activate"] \
        else grad_out
    g_b = g_z.sum(axis=0)
    g_m = np.zeros_like(cache["m"])
    g_att = np.zeros_like(att)
    for k, hc in enumerate(cache["heads"]):
        sl = slice(k * dh, (k + 1) * dh)
        mk = cache["m"][:, sl]
        gz_k = g_z[:, sl]
        alpha, raw, aw = hc["alpha"], hc["raw"], hc["aw"]
        # aggregation: z_v = sum_u alpha_vu m_u
        g_m[:, sl] += aw.T @ gz_k
        g_alpha = np.einsum("ed,ed->e", gz_k[ids], mk[nbr])
        # softmax: g_s = alpha * (g_alpha - sum_seg(alpha * g_alpha))
        dot = _segment_sum(alpha * g_alpha, ids, n)
        g_scores = alpha * (g_alpha - dot[ids])
        g_raw = g_scores * np.where(raw > 0, 1.0, _LEAKY_SLOPE)
        a_dst, a_src = att[k, :dh], att[k, dh:]
        g_att[k, :dh] = g_raw @ mk[ids]
        g_att[k, dh:] = g_raw @ mk[nbr]
        g_m[:, sl] += _segment_sum(g_raw, ids, n)[:, None] * a_dst
        g_m[:, sl] += np.bincount(nbr, weights=g_raw,
                                  minlength=n)[:, None] * a_src
    grad_h = g_m @ p.W.T
    g_w = cache["h"].T @ g_m
    return grad_h, {"w": g_w, "b": g_b, "att": g_att}


def _jk_fwd(layer_outputs: list[np.ndarray], p: LinearParams):
    rows = {o.shape[0] for o in layer_outputs}
    if len(rows) != 1:
        raise DataError("jumping-knowledge inputs have ragged row counts")
    cat = np.concatenate(layer_outputs, axis=1)
    out = linear_forward(cat, p)
    return out, {"cat": cat, "p": p,
                 "widths": [o.shape[1] for o in layer_outputs]}


def _jk_bwd(cache, grad_out):
    g_cat, g_w, g_b = linear_backward(cache["cat"], cache["p"], grad_out)
    splits = np.cumsum(cache["widths"])[:-1]
    return np.split(g_cat, splits, axis=1), {"w": g_w, "b": g_b}


# ---------------------------------------------------------------------------
# public single-layer entry points (forward only, per the module contract)


def sage_layer_forward(h, g, p, sampled=None, activate=True):
    return _sage_fwd(h, g, p, sampled=sampled, activate=activate)[0]


def sage_res_layer_forward(h, h0, g, p, alpha=0.1, beta=0.9, sampled=None):
    return _sage_res_fwd(h, h0, g, p, alpha, beta, sampled=sampled)[0]


def gcn_layer_forward(h, g, p, activate=True):
    return _gcn_fwd(h, g, p, activate=activate)[0]


def gat_layer_forward(h, g, p, att, include_self=True, activate=True):
    return _gat_fwd(h, g, p, att, include_self=include_self,
                    activate=activate)[0]


def jk_aggregate(layer_outputs, p):
    return _jk_fwd(layer_outputs, p)[0]


def gat_attention_weights(h, g, p, att, include_self=True):
    """Per-head attention coefficients and the segment layout they live in.

    Returns (alphas, offsets, neighbors) where alphas is (heads, n_pairs).
    """
    _, cache = _gat_fwd(h, g, p, att, include_self=include_self)
    alphas = np.stack([hc["alpha"] for hc in cache["heads"]])
    return alphas, cache["offsets"], cache["neighbors"]


# ---------------------------------------------------------------------------
# full model


class GnnModel:
    """Parameter container plus forward/backward for one config."""

    def __init__(self, config: ModelConfig, in_features: int = N_FEATURES,
                 seed: int = 0):
        self.config = config
        self.in_features = in_features
        self.seed = seed
        self.params: dict[str, np.ndarray] = {}
        self._build(seed)

    def _block_seeds(self, seed: int, count: int) -> list[int]:
        return [int(s) for s in
                np.random.SeedSequence(seed).generate_state(count)]

    def _build(self, seed: int) -> None:
        cfg = self.config
        seeds = iter(self._block_seeds(seed, 2 * cfg.n_layers + 4))
        for k in range(1, cfg.n_layers + 1):
            fin = self.in_features if k == 1 else cfg.hidden
            if cfg.variant in ("sage", "sage_jk_res"):
                shape = (2 * fin, cfg.hidden)
            else:
                shape = (fin, cfg.hidden)
            p = init_params(shape, next(seeds))
            self.params[f"layer{k}.w"] = p.W
            self.params[f"layer{k}.b"] = p.b
            if cfg.variant == "gat":
                dh = cfg.hidden // cfg.gat_heads
                rng = np.random.default_rng(next(seeds))
                limit = np.sqrt(6.0 / (2 * dh + 1))
                self.params[f"layer{k}.att"] = rng.uniform(
                    -limit, limit, size=(cfg.gat_heads, 2 * dh))
        if cfg.variant == "sage_jk_res":
            p = init_params((cfg.n_layers * cfg.hidden, cfg.hidden),
                            next(seeds))
            self.params["jk.w"] = p.W
            self.params["jk.b"] = p.b
        p = init_params((cfg.hidden, cfg.out_channels), next(seeds))
        self.params["head.w"] = p.W
        self.params["head.b"] = p.b

    def _layer_params(self, k: int) -> LinearParams:
        return LinearParams(W=self.params[f"layer{k}.w"],
                            b=self.params[f"layer{k}.b"])

    def forward_with_cache(self, g: Graph, x: np.ndarray,
                           sampled: list | None = None):
        cfg = self.config
        if x.shape[1] != self.in_features:
            raise DataError(
                f"feature width {x.shape[1]} != expected {self.in_features}")
        if sampled is not None and len(sampled) != cfg.n_layers:
            raise DataError("one sampled neighborhood per layer required")
        layer_h: list[np.ndarray] = []
        layer_caches = []
        op_dtype = np.result_type(x.dtype, self.params["layer1.w"].dtype)
        gcn_op = None
        mean_op = None
        if cfg.variant == "gcn":
            gcn_op = _graph_operator(g, "gcn", op_dtype)
        elif cfg.variant != "gat" and sampled is None:
            mean_op = _graph_operator(g, "mean", op_dtype)
        h = x
        h0 = None
        for k in range(1, cfg.n_layers + 1):
            p = self._layer_params(k)
            samp = sampled[k - 1] if sampled is not None else None
            if cfg.variant == "gcn":
                h, cache = _gcn_fwd(h, g, p, op=gcn_op)
            elif cfg.variant == "gat":
                h, cache = _gat_fwd(h, g, p, self.params[f"layer{k}.att"])
            elif cfg.variant == "sage" or k == 1:
                h, cache = _sage_fwd(h, g, p, sampled=samp, op=mean_op)
            else:
                h, cache = _sage_res_fwd(h, h0, g, p, cfg.alpha, cfg.beta,
                                         sampled=samp, op=mean_op)
            if k == 1:
                h0 = h
            layer_h.append(h)
            layer_caches.append(cache)
        jk_cache = None
        if cfg.variant == "sage_jk_res":
            jk_p = LinearParams(W=self.params["jk.w"], b=self.params["jk.b"])
            z_jk, jk_cache = _jk_fwd(layer_h, jk_p)
            emb = relu_forward(z_jk)
            jk_cache["z"] = z_jk
        else:
            emb = layer_h[-1]
        head_p = LinearParams(W=self.params["head.w"],
                              b=self.params["head.b"])
        out = linear_forward(emb, head_p)
        cache = {"layer_caches": layer_caches, "layer_h": layer_h,
                 "jk": jk_cache, "emb": emb, "head_p": head_p}
        return out, cache

    def forward(self, g: Graph, x: np.ndarray,
                sampled: list | None = None) -> np.ndarray:
        return self.forward_with_cache(g, x, sampled=sampled)[0]

    def backward(self, cache, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        cfg = self.config
        grads: dict[str, np.ndarray] = {}
        g_emb, grads["head.w"], grads["head.b"] = linear_backward(
            cache["emb"], cache["head_p"], grad_out)
        n_layers = cfg.n_layers
        # gradient flowing into each stored layer output
        g_layer = [np.zeros_like(h) for h in cache["layer_h"]]
        if cfg.variant == "sage_jk_res":
            g_zjk = relu_backward(cache["jk"]["z"], g_emb)
            jk_splits, jk_grads = _jk_bwd(cache["jk"], g_zjk)
            grads["jk.w"] = jk_grads["w"]
            grads["jk.b"] = jk_grads["b"]
            for k in range(n_layers):
                g_layer[k] += jk_splits[k]
        else:
            g_layer[-1] += g_emb
        g_h0 = None
        for k in range(n_layers, 0, -1):
            lc = cache["layer_caches"][k - 1]
            upstream = g_layer[k - 1]
            if cfg.variant == "sage_jk_res" and k == 1 and g_h0 is not None:
                upstream = upstream + g_h0
            if cfg.variant == "gcn":
                g_in, pg = _gcn_bwd(lc, upstream)
            elif cfg.variant == "gat":
                g_in, pg = _gat_bwd(lc, upstream)
                grads[f"layer{k}.att"] = pg["att"]
            elif cfg.variant == "sage" or k == 1:
                g_in, pg = _sage_bwd(lc, upstream)
            else:
                g_in, gh0, pg = _sage_res_bwd(lc, upstream)
                if g_h0 is None:
                    g_h0 = gh0
                else:
                    g_h0 = g_h0 + gh0
            grads[f"layer{k}.w"] = pg["w"]
            grads[f"layer{k}.b"] = pg["b"]
            if k > 1:
                g_layer[k - 2] += g_in
        return grads


def model_forward(model: GnnModel, g: Graph, features: np.ndarray,
                  sampled: list | None = None) -> np.ndarray:
    return model.forward(g, features, sampled=sampled)


def model_backward(model: GnnModel, cache, grad_out: np.ndarray
                   ) -> dict[str, np.ndarray]:
    return model.backward(cache, grad_out)


def count_params(model: GnnModel) -> int:
    return int(sum(p.size for p in model.params.values()))
