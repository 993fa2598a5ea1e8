"""The fixed nonlinear machinery: ReLU, dimension-doubling expansion, the
lossless collapse, forward maps, and the exact inverse map.

A layer computes ``vn_expand(W @ q)``: the input is projected by a fixed
weight matrix and split into its positive part and negated negative part.
The expansion concatenates ``relu(z)`` and ``relu(-z)``, so nothing is lost
(``un_collapse`` recovers ``z`` exactly) and the squared norm is preserved.
The structural expand/collapse matrices are never materialized; they are
index arithmetic on the top and bottom halves.

All vector operations also accept 2-D arrays whose columns are samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    NotInvertibleError,
    ParameterError,
    ResourceError,
)
from .matrixgen import (
    WeightMatrix,
    load_weight,
    save_weight,
    verify_full_column_rank,
)

#: Cap on the total bytes network_forward may retain (4 GiB).
DEFAULT_MEMORY_BUDGET = 4 * 1024 ** 3

#: SVD cutoff (relative to sigma_max) for non-orthonormal pseudo-inverses.
PINV_RCOND = 1e-10


def relu(v: np.ndarray) -> np.ndarray:
    """Elementwise max(v, 0)."""
    return np.maximum(v, 0.0)


def sigmoid(v: np.ndarray) -> np.ndarray:
    """Elementwise logistic function 1 / (1 + exp(-v))."""
    out = np.empty_like(v, dtype=np.float64)
    np.negative(v, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid}


def vn_expand(z: np.ndarray) -> np.ndarray:
    """Stack relu(z) on top of relu(-z), doubling the leading dimension.

    Exactly norm-preserving: ||vn_expand(z)||^2 == ||z||^2.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    out = np.empty((2 * n,) + z.shape[1:], dtype=np.float64)
    np.maximum(z, 0.0, out=out[:n])
    np.minimum(z, 0.0, out=out[n:])
    np.negative(out[n:], out=out[n:])
    return out


def un_collapse(ybar: np.ndarray) -> np.ndarray:
    """Difference of the top and bottom halves; inverts :func:`vn_expand`.

    ``un_collapse(vn_expand(z)) == z`` for every z (the lossless flow
    property), and more generally for any ybar the result is
    ``ybar[:n] - ybar[n:]``.
    """
    ybar = np.asarray(ybar, dtype=np.float64)
    if ybar.shape[0] % 2 != 0:
        raise DimensionError(
            f"collapse needs an even leading dimension, got {ybar.shape[0]}"
        )
    n = ybar.shape[0] // 2
    return ybar[:n] - ybar[n:]


@dataclass(frozen=True)
class HnfLayer:
    """One fixed layer: weight projection followed by the ReLU expansion.

    ``expand=False`` turns the layer into a plain activation layer
    ``act(W @ q)`` (the ELM front); such a layer halves nothing and cannot
    be inverted.
    """

    weight: WeightMatrix
    expand: bool = True
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ParameterError(
                f"unknown activation {self.activation!r}; "
                f"expected one of {sorted(ACTIVATIONS)}"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.cols

    @property
    def out_dim(self) -> int:
        return 2 * self.weight.rows if self.expand else self.weight.rows


@dataclass(frozen=True)
class HnfNetwork:
    """An ordered chain of layers with validated dimension chaining."""

    layers: tuple[HnfLayer, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise DimensionError("a network needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise DimensionError(
                    f"layer {i} expects input dim {self.layers[i].in_dim} "
                    f"but layer {i - 1} outputs {self.layers[i - 1].out_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def has_front(self) -> bool:
        """True when layer 0 is a non-expanding (ELM-style) feature layer."""
        return not self.layers[0].expand


def layer_forward(layer: HnfLayer, q: np.ndarray) -> np.ndarray:
    """Apply one layer to a vector or to columns of a matrix."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != layer.in_dim:
        raise DimensionError(
            f"input dim {q.shape[0]} does not match layer in_dim {layer.in_dim}"
        )
    z = layer.weight.entries @ q
    if layer.expand:
        return vn_expand(z)
    return ACTIVATIONS[layer.activation](z)


def _feature_bytes(dim: int, x: np.ndarray) -> int:
    count = 1 if x.ndim == 1 else x.shape[1]
    return dim * count * 8


def network_forward(
    net: HnfNetwork,
    x: np.ndarray,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> list[np.ndarray]:
    """Feature vectors of every layer, first to last.

    Retains all intermediate features; raises :class:`ResourceError` naming
    the offending layer if the retained total would exceed ``memory_budget``
    (feature dimension doubles per expanding layer). Use
    :func:`iter_layer_features` to visit layers one at a time instead.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != net.input_dim:
        raise DimensionError(
            f"input dim {x.shape[0]} does not match network input "
            f"dim {net.input_dim}"
        )
    total = 0
    for i, layer in enumerate(net.layers):
        total += _feature_bytes(layer.out_dim, x)
        if total > memory_budget:
            raise ResourceError(
                f"retaining features up to layer {i + 1} needs {total} bytes, "
                f"over the {memory_budget}-byte budget; "
                "use iter_layer_features for streaming access"
            )
    features = []
    cur = x
    for layer in net.layers:
        cur = layer_forward(layer, cur)
        features.append(cur)
    return features


def iter_layer_features(net: HnfNetwork, x: np.ndarray):
    """Yield each layer's features in turn, retaining only the current one."""
    cur = np.asarray(x, dtype=np.float64)
    if cur.shape[0] != net.input_dim:
        raise DimensionError(
            f"input dim {cur.shape[0]} does not match network input "
            f"dim {net.input_dim}"
        )
    for layer in net.layers:
        cur = layer_forward(layer, cur)
        yield cur


def _pinv(w: WeightMatrix) -> np.ndarray:
    if w.orthonormal:
        return w.entries.T
    return np.linalg.pinv(w.entries, rcond=PINV_RCOND)


def network_invert(net: HnfNetwork, ybar_last: np.ndarray) -> np.ndarray:
    """Reconstruct the network input from the last layer's features.

    Walks the chain backwards: collapse the expansion, then apply the weight
    pseudo-inverse (the transpose, for orthonormal weights). Requires every
    layer to expand and every weight to be full column rank.
    """
    for i, layer in enumerate(net.layers):
        if not layer.expand:
            raise NotInvertibleError(
                f"layer {i + 1} is a non-expanding feature layer; "
                "the collapse that inversion relies on does not exist"
            )
        if not verify_full_column_rank(layer.weight):
            raise NotInvertibleError(
                f"layer {i + 1} weight is rank deficient"
            )
    cur = np.asarray(ybar_last, dtype=np.float64)
    if cur.shape[0] != net.layers[-1].out_dim:
        raise DimensionError(
            f"feature dim {cur.shape[0]} does not match last layer output "
            f"dim {net.layers[-1].out_dim}"
        )
    for layer in reversed(net.layers):
        cur = _pinv(layer.weight) @ un_collapse(cur)
    return cur


@dataclass(frozen=True)
class PairDistanceReport:
    """Squared distances of a pair of inputs through every layer."""

    input_dist2: float
    per_layer_dist2: list[float]


def pair_distance_report(
    net: HnfNetwork, x1: np.ndarray, x2: np.ndarray
) -> PairDistanceReport:
    """Squared input distance and per-layer squared feature distances.

    With orthonormal weights every layer-l entry lies in
    ``[d2 / 2**l, d2]`` where ``d2`` is the squared input distance.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.ndim != 1 or x2.ndim != 1:
        raise DimensionError("pair distances are defined for single vectors")
    if x1.shape != x2.shape:
        raise DimensionError(f"shape mismatch: {x1.shape} vs {x2.shape}")
    d2 = float(np.sum((x1 - x2) ** 2))
    f1 = network_forward(net, x1)
    f2 = network_forward(net, x2)
    dists = [float(np.sum((a - b) ** 2)) for a, b in zip(f1, f2)]
    return PairDistanceReport(d2, dists)


@dataclass(frozen=True)
class PerturbationCheck:
    """Outcome of one weight-perturbation bound evaluation."""

    lhs: float
    rhs: float
    holds: bool


def weight_perturbation_check(
    layer: HnfLayer, dw: np.ndarray, q: np.ndarray
) -> PerturbationCheck:
    """Check that perturbing the weight moves the output by at most
    ``||dW||_F^2 * ||q||^2`` (in squared norm)."""
    dw = np.asarray(dw, dtype=np.float64)
    if dw.shape != layer.weight.entries.shape:
        raise DimensionError(
            f"perturbation shape {dw.shape} does not match weight shape "
            f"{layer.weight.entries.shape}"
        )
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != layer.in_dim:
        raise DimensionError(
            f"input dim {q.shape[0]} does not match layer in_dim {layer.in_dim}"
        )
    act = vn_expand if layer.expand else ACTIVATIONS[layer.activation]
    out = act(layer.weight.entries @ q)
    out_perturbed = act((layer.weight.entries + dw) @ q)
    lhs = float(np.sum((out - out_perturbed) ** 2))
    rhs = float(np.sum(dw ** 2) * np.sum(q ** 2))
    return PerturbationCheck(lhs, rhs, lhs <= rhs * (1.0 + 1e-9))


def save_network(net: HnfNetwork, out_dir) -> Path:
    """Write the weight files plus a JSON manifest; returns the manifest path.

    Manifest schema: ``{"layers": [{"file", "rows", "cols", "kind", "seed",
    "expand", "activation"}, ...]}`` with files relative to the manifest.
    """
    out_dir = Path(out_dir)
    weights_dir = out_dir / "weights"
    weights_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, layer in enumerate(net.layers):
        fname = f"weights/w{i:02d}.hnfw"
        save_weight(layer.weight, out_dir / fname)
        records.append({
            "file": fname,
            "rows": layer.weight.rows,
            "cols": layer.weight.cols,
            "kind": layer.weight.kind.name,
            "seed": layer.weight.seed,
            "expand": layer.expand,
            "activation": layer.activation,
        })
    manifest = out_dir / "network.json"
    manifest.write_text(json.dumps({"layers": records}, indent=2))
    return manifest


def load_network(manifest_path) -> HnfNetwork:
    """Rebuild a network from a manifest written by :func:`save_network`."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    layers = []
    for rec in doc["layers"]:
        w = load_weight(base / rec["file"])
        layers.append(HnfLayer(w, expand=rec["expand"],
                               activation=rec["activation"]))
    return HnfNetwork(tuple(layers))
