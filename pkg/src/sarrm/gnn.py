"""Message-passing graph network used for both the power policy and the dual regressor.

Nodes are transmitter/receiver pairs.  Each layer computes, for node ``i``::

    out_i = act(W_self y_i + e_ii W_direct y_i + sum_{j != i} e_ji W_nbr y_j + b)

with ``e`` the normalized edge weights.  The last layer emits one scalar per
node which goes through the output head: ``p_max * sigmoid`` for the policy,
``softplus`` for the regressor.

Gradients are hand-written reverse mode over this fixed layer structure; there
is no general tape.  Parameters live in one flat float64 vector so optimizer
steps are plain vector arithmetic.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sarrm.errors import ConfigError, DomainError, NumericError

CHECKPOINT_FORMAT = "sarrm-params/1"


@dataclass
class GraphInput:
    edge_weight: np.ndarray  # (..., m, m); [j, i] is the edge from j into i
    node_feature: np.ndarray  # (..., m, d_in)

    @property
    def m(self) -> int:
        return self.edge_weight.shape[-1]


def normalize_gain(gain, g_ref: float, decades: float = 3.0) -> np.ndarray:
    """Log-domain squashing ``tanh((log10 G - log10 g_ref) / decades)``."""
    g = np.asarray(gain, dtype=np.float64)
    if np.any(~(g > 0)):
        raise DomainError("edge normalization needs strictly positive gains")
    return np.tanh((np.log10(g) - np.log10(g_ref)) / decades)


def build_graph(gain, node_feature, g_ref: float, decades: float = 3.0) -> GraphInput:
    gain = np.asarray(gain, dtype=np.float64)
    y = np.asarray(node_feature, dtype=np.float64)
    if y.ndim == gain.ndim - 1:
        y = y[..., None]
    if y.shape[-2] != gain.shape[-1]:
        raise ConfigError(f"node features have {y.shape[-2]} rows, graph has {gain.shape[-1]} nodes",
                          field="node_feature")
    return GraphInput(normalize_gain(gain, g_ref, decades), y)


def _sigmoid(z):
    # overflow-free for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


@dataclass(frozen=True)
class GraphNet:
    """Architecture and fixed input/output scalings; parameters are passed separately.

    ``head`` is ``"sigmoid"`` (outputs in ``(0, out_scale)``) or ``"softplus"``
    (non-negative, unbounded).
    """

    widths: tuple = (64, 64)
    d_in: int = 1
    head: str = "sigmoid"
    out_scale: float = 1.0
    g_ref: float = 1.0
    edge_decades: float = 3.0
    feature_scale: float = 1.0
    leak: float = 0.01
    dims: tuple = field(init=False)

    def __post_init__(self):
        if self.head not in ("sigmoid", "softplus"):
            raise ConfigError(f"unknown output head {self.head!r}", field="head")
        if self.d_in < 1 or any(w < 1 for w in self.widths):
            raise ConfigError("layer widths must be positive", field="widths")
        if not (self.g_ref > 0 and self.edge_decades > 0 and self.feature_scale > 0):
            raise ConfigError("g_ref, edge_decades and feature_scale must be positive", field="g_ref")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "dims", (int(self.d_in),) + self.widths + (1,))

    @property
    def shapes(self) -> list[tuple]:
        out = []
        for a, b in zip(self.dims[:-1], self.dims[1:]):
            out.append((3 * a, b))
            out.append((b,))
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def unpack(self, flat) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` per layer.  ``W`` stacks the self, direct and neighbor blocks row-wise."""
        flat = np.asarray(flat)
        if flat.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got shape {flat.shape}",
                              field="params")
        layers, pos = [], 0
        for wshape, bshape in zip(self.shapes[::2], self.shapes[1::2]):
            nw = wshape[0] * wshape[1]
            w = flat[pos:pos + nw].reshape(wshape)
            pos += nw
            b = flat[pos:pos + bshape[0]]
            pos += bshape[0]
            layers.append((w, b))
        return layers

    def blocks(self, flat, layer: int) -> dict:
        """Named weight blocks of one layer."""
        w, b = self.unpack(flat)[layer]
        d = w.shape[0] // 3
        return {"self": w[:d], "direct": w[d:2 * d], "neighbor": w[2 * d:], "bias": b}

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        parts = []
        for wshape, bshape in zip(self.shapes[::2], self.shapes[1::2]):
            bound = 1.0 / np.sqrt(wshape[0])
            parts.append(rng.uniform(-bound, bound, size=wshape).ravel())
            parts.append(rng.uniform(-bound, bound, size=bshape))
        return np.concatenate(parts)

    def graph(self, gain, node_feature) -> GraphInput:
        """Graph from raw gains and unscaled node features."""
        return build_graph(gain, np.asarray(node_feature, dtype=np.float64) / self.feature_scale,
                           self.g_ref, self.edge_decades)

    # -- forward / backward -------------------------------------------------

    def forward(self, flat, graph: GraphInput, keep: bool = False):
        """Outputs of shape ``(..., m)``; with ``keep`` also the cache needed by :meth:`backward`."""
        e = graph.edge_weight
        y = graph.node_feature
        if y.shape[-1] != self.d_in:
            raise ConfigError(f"node feature width {y.shape[-1]} != d_in {self.d_in}",
                              field="node_feature")
        m = e.shape[-1]
        diag = np.diagonal(e, axis1=-2, axis2=-1)[..., None]
        adj = e * (1.0 - np.eye(m))
        layers = self.unpack(flat)
        cache = {"adj": adj, "diag": diag, "h": [], "pre": []}
        for li, (w, b) in enumerate(layers):
            agg = np.einsum("...ji,...jd->...id", adj, y)
            h = np.concatenate([y, diag * y, agg], axis=-1)
            pre = h @ w + b
            if keep:
                cache["h"].append(h)
                cache["pre"].append(pre)
            if li < len(layers) - 1:
                y = np.where(pre > 0, pre, self.leak * pre)
            else:
                y = pre
        z = y[..., 0]
        if self.head == "sigmoid":
            # keep powers strictly inside (0, out_scale) even when the sigmoid saturates
            s = np.clip(_sigmoid(z), np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
            out = self.out_scale * s
            cache["dout_dz"] = self.out_scale * s * (1.0 - s)
        else:
            out = self.out_scale * _softplus(z)
            cache["dout_dz"] = self.out_scale * _sigmoid(z)
        if not np.all(np.isfinite(out)):
            raise NumericError("non-finite network output")
        return (out, cache) if keep else out

    def backward(self, flat, cache, d_out) -> np.ndarray:
        """Gradient of ``sum(d_out * out)`` with respect to the flat parameters."""
        layers = self.unpack(flat)
        grads = []
        dy = (np.asarray(d_out) * cache["dout_dz"])[..., None]
        adj, diag = cache["adj"], cache["diag"]
        for li in range(len(layers) - 1, -1, -1):
            w, _ = layers[li]
            h, pre = cache["h"][li], cache["pre"][li]
            if li < len(layers) - 1:
                dpre = np.where(pre > 0, dy, self.leak * dy)
            else:
                dpre = dy
            d_in = w.shape[0] // 3
            h2 = h.reshape(-1, h.shape[-1])
            dp2 = dpre.reshape(-1, dpre.shape[-1])
            grads.append((h2.T @ dp2, dp2.sum(axis=0)))
            if li > 0:
                dh = dpre @ w.T
                dy = (dh[..., :d_in] + diag * dh[..., d_in:2 * d_in]
                      + np.einsum("...ji,...id->...jd", adj, dh[..., 2 * d_in:]))
        parts = []
        for gw, gb in reversed(grads):
            parts.append(gw.ravel())
            parts.append(gb)
        g = np.concatenate(parts)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite parameter gradient")
        return g

    # -- serialization --------------------------------------------------------

    def config(self) -> dict:
        return {
            "widths": list(self.widths), "d_in": self.d_in, "head": self.head,
            "out_scale": self.out_scale, "g_ref": self.g_ref,
            "edge_decades": self.edge_decades, "feature_scale": self.feature_scale,
            "leak": self.leak,
        }

    @classmethod
    def from_config(cls, d: dict) -> "GraphNet":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


def policy_forward(net: GraphNet, params, graph: GraphInput) -> np.ndarray:
    """Transmit powers in ``(0, p_max)``."""
    if net.head != "sigmoid":
        raise ConfigError("policy network must use the sigmoid head", field="head")
    return net.forward(params, graph)


def regressor_forward(net: GraphNet, params, gain) -> np.ndarray:
    """Estimated dual variables from long-term gains, constant unit node features."""
    if net.head != "softplus":
        raise ConfigError("regressor network must use the softplus head", field="head")
    gain = np.asarray(gain, dtype=np.float64)
    ones = np.ones(gain.shape[:-1] + (net.d_in,))
    return net.forward(params, build_graph(gain, ones, net.g_ref, net.edge_decades))


# -- checkpoint format ----------------------------------------------------------
#
# JSON object:
#   format   "sarrm-params/1"
#   net      GraphNet.config()
#   shapes   list of per-tensor shapes in flattening order
#   dtype    "<f8"
#   data     base64 of the little-endian float64 flat vector


def encode_array(arr) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def decode_array(s: str, shape=None) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(s), dtype="<f8").astype(np.float64)
    return arr.reshape(shape) if shape is not None else arr


def params_to_dict(net: GraphNet, params) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "net": net.config(),
        "shapes": [list(s) for s in net.shapes],
        "dtype": "<f8",
        "data": encode_array(params),
    }


def params_from_dict(d: dict) -> tuple[GraphNet, np.ndarray]:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {d.get('format')!r}", field="format")
    net = GraphNet.from_config(d["net"])
    params = decode_array(d["data"])
    if [list(s) for s in net.shapes] != [list(s) for s in d["shapes"]] or params.size != net.n_params:
        raise ConfigError("checkpoint shapes do not match the network", field="shapes")
    return net, params


def save_params(path, net: GraphNet, params) -> None:
    Path(path).write_text(json.dumps(params_to_dict(net, params), indent=1))


def load_params(path) -> tuple[GraphNet, np.ndarray]:
    return params_from_dict(json.loads(Path(path).read_text()))
