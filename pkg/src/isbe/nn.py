"""Layers and the three benchmark networks.

Networks are declarative layer lists instantiated over the autograd tape.
Parameter shapes that depend on upstream activations (conv in-channels,
linear in-features) are resolved lazily from the first forward shape and then
frozen.  Initialization is Kaiming-uniform fan-in with zero biases, drawn
from a generator seeded per network so equal seeds give equal parameters.

Inner activations are ReLU after every conv and after the 512-wide linear;
the architecture diagrams this code follows leave them unspecified, so the
choice is kept explicit in the layer lists below where it can be audited.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .autograd import Tape
from .errors import ShapeError
from .tensor import ConvSpec, Tensor, conv_padding


@dataclass(frozen=True)
class Conv:
    spec: ConvSpec


@dataclass(frozen=True)
class Linear:
    out_features: int
    bias: bool = True

    def __post_init__(self):
        if self.out_features < 1:
            raise ValueError("out_features must be >= 1")


@dataclass(frozen=True)
class Dropout:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Relu:
    pass


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))


class Network:
    """Ordered layers plus their parameter tensors."""

    def __init__(self, layers, seed: int = 0, dtype=np.float32):
        self.layers = list(layers)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.input_shape = None          # set at first forward, then frozen
        self.dropout_rng = np.random.default_rng(seed ^ 0x5EED)
        self.last_param_nodes: dict[str, int] = {}

    # ------------------------------------------------------------ resolution

    def resolve(self, input_shape):
        """Infer all parameter shapes from the per-example input shape and
        initialize them. Idempotent for a matching shape."""
        input_shape = tuple(input_shape)
        if self.input_shape is not None:
            if input_shape != self.input_shape:
                raise ShapeError(
                    f"network resolved for {self.input_shape}, got {input_shape}")
            return
        rng = np.random.default_rng(self.seed)
        shape = input_shape
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                c, h, w = shape
                s = layer.spec
                before, after = conv_padding(s.kernel, s.padded)
                hp, wp = h + before + after, w + before + after
                if s.kernel > hp or s.kernel > wp:
                    raise ShapeError(
                        f"layer {idx}: kernel {s.kernel} larger than input {hp}x{wp}")
                fan_in = c * s.kernel * s.kernel
                self.params[f"layer{idx}.weight"] = _kaiming_uniform(
                    rng, (s.out_channels, c, s.kernel, s.kernel), fan_in, self.dtype)
                self.params[f"layer{idx}.bias"] = Tensor(
                    np.zeros(s.out_channels, dtype=self.dtype))
                oh = (hp - s.kernel) // s.stride + 1
                ow = (wp - s.kernel) // s.stride + 1
                shape = (s.out_channels, oh, ow)
            elif isinstance(layer, Linear):
                (fan_in,) = shape
                self.params[f"layer{idx}.weight"] = _kaiming_uniform(
                    rng, (fan_in, layer.out_features), fan_in, self.dtype)
                if layer.bias:
                    self.params[f"layer{idx}.bias"] = Tensor(
                        np.zeros(layer.out_features, dtype=self.dtype))
                shape = (layer.out_features,)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            # Dropout / Relu keep the shape
        self.input_shape = input_shape

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def reseed_dropout(self, seed: int):
        self.dropout_rng = np.random.default_rng(seed ^ 0x5EED)

    # ---------------------------------------------------------------- export

    def output_shape(self):
        shape = self.input_shape
        for layer in self.layers:
            if isinstance(layer, Conv):
                c, h, w = shape
                s = layer.spec
                before, after = conv_padding(s.kernel, s.padded)
                oh = (h + before + after - s.kernel) // s.stride + 1
                ow = (w + before + after - s.kernel) // s.stride + 1
                shape = (s.out_channels, oh, ow)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Linear):
                shape = (layer.out_features,)
        return shape


def forward(net: Network, x: Tensor, training: bool, tape: Tape) -> int:
    """Run the network on the tape; returns the raw-score node id.

    Leaf node ids of the parameters used are left in net.last_param_nodes so
    the trainer can collect gradients after backward."""
    if x.data.ndim < 2:
        raise ShapeError(f"batched input expected, got shape {x.shape}")
    net.resolve(x.shape[1:])
    param_nodes = {}
    cur = tape.leaf(x)
    for idx, layer in enumerate(net.layers):
        if isinstance(layer, Conv):
            w = tape.leaf(net.params[f"layer{idx}.weight"])
            b = tape.leaf(net.params[f"layer{idx}.bias"])
            param_nodes[f"layer{idx}.weight"] = w
            param_nodes[f"layer{idx}.bias"] = b
            cur = tape.conv2d(cur, w, b, layer.spec)
        elif isinstance(layer, Linear):
            w = tape.leaf(net.params[f"layer{idx}.weight"])
            param_nodes[f"layer{idx}.weight"] = w
            cur = tape.matmul(cur, w)
            if layer.bias:
                b = tape.leaf(net.params[f"layer{idx}.bias"])
                param_nodes[f"layer{idx}.bias"] = b
                cur = tape.add(cur, b)
        elif isinstance(layer, Flatten):
            n = tape.value(cur).shape[0]
            cur = tape.reshape(cur, (n, -1))
        elif isinstance(layer, Dropout):
            cur = tape.dropout(cur, layer.rate, net.dropout_rng, training)
        elif isinstance(layer, Relu):
            cur = tape.relu(cur)
        else:  # pragma: no cover
            raise TypeError(f"unknown layer {layer!r}")
    net.last_param_nodes = param_nodes
    return cur


def build_n0(seed: int = 0, dtype=np.float32) -> Network:
    """Two strided convs, dropout, two linears, ten raw scores."""
    layers = [
        Conv(ConvSpec(3, stride=2, out_channels=32)), Relu(),
        Conv(ConvSpec(3, stride=2, out_channels=64)), Relu(),
        Dropout(0.20),
        Flatten(),
        Linear(512), Relu(),
        Linear(10),
    ]
    return Network(layers, seed=seed, dtype=dtype)


def build_n1(relocated: bool = False, seed: int = 0, dtype=np.float32) -> Network:
    """Two three-conv blocks then a 4x4 conv and a final projection.

    relocated=True enables the final linear's bias, which realizes a trained
    relocation of the downstream score normalization."""
    layers = [
        Conv(ConvSpec(3, out_channels=32)), Relu(),
        Conv(ConvSpec(3, out_channels=32)), Relu(),
        Conv(ConvSpec(5, stride=2, out_channels=32, padded=True)), Relu(),
        Dropout(0.40),
        Conv(ConvSpec(3, out_channels=64)), Relu(),
        Conv(ConvSpec(3, out_channels=64)), Relu(),
        Conv(ConvSpec(5, stride=2, out_channels=64, padded=True)), Relu(),
        Dropout(0.40),
        Conv(ConvSpec(4, out_channels=128)), Relu(),
        Flatten(),
        Linear(10, bias=relocated),
    ]
    return Network(layers, seed=seed, dtype=dtype)


ARCHITECTURES = {
    "n0": lambda seed, dtype=np.float32: build_n0(seed, dtype),
    "n1": lambda seed, dtype=np.float32: build_n1(False, seed, dtype),
    "n1r": lambda seed, dtype=np.float32: build_n1(True, seed, dtype),
}


# ----------------------------------------------------------------- checkpoint

_MAGIC = b"ISBENET1"
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}


def _layer_to_dict(layer):
    if isinstance(layer, Conv):
        s = layer.spec
        return {"kind": "conv", "kernel": s.kernel, "stride": s.stride,
                "out_channels": s.out_channels, "padded": s.padded}
    if isinstance(layer, Linear):
        return {"kind": "linear", "out_features": layer.out_features,
                "bias": layer.bias}
    if isinstance(layer, Dropout):
        return {"kind": "dropout", "rate": layer.rate}
    if isinstance(layer, Flatten):
        return {"kind": "flatten"}
    if isinstance(layer, Relu):
        return {"kind": "relu"}
    raise TypeError(f"unknown layer {layer!r}")


def _layer_from_dict(d):
    kind = d["kind"]
    if kind == "conv":
        return Conv(ConvSpec(d["kernel"], d["stride"], d["out_channels"], d["padded"]))
    if kind == "linear":
        return Linear(d["out_features"], d["bias"])
    if kind == "dropout":
        return Dropout(d["rate"])
    if kind == "flatten":
        return Flatten()
    if kind == "relu":
        return Relu()
    raise ValueError(f"unknown layer kind {kind!r}")


def save_checkpoint(net: Network, path):
    header = {
        "layers": [_layer_to_dict(la) for la in net.layers],
        "seed": net.seed,
        "dtype": net.dtype.name,
        "input_shape": list(net.input_shape) if net.input_shape else None,
    }
    hbytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(struct.pack("<I", len(net.params)))
        for name, p in net.params.items():
            nbytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nbytes)))
            fh.write(nbytes)
            fh.write(struct.pack("<BB", _DTYPE_TAGS[p.dtype], p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.shape))
            fh.write(p.data.astype(p.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        net = Network([_layer_from_dict(d) for d in header["layers"]],
                      seed=header["seed"], dtype=np.dtype(header["dtype"]))
        if header["input_shape"]:
            net.resolve(tuple(header["input_shape"]))
        (nparams,) = struct.unpack("<I", fh.read(4))
        for _ in range(nparams):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            tag, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            dtype = _TAG_DTYPES[tag]
            payload = fh.read(int(np.prod(shape)) * dtype.itemsize)
            arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).reshape(shape)
            net.params[name] = Tensor(arr.astype(dtype))
    return net
