"""
Per-view encoders mapping data vectors into the shared space.

Each view ``d`` owns a chain of dense layers ``h <- act(W h + b)``; the last
layer of every view has the same output width ``K``. Everything is float64.
A single identity layer with zero bias is the linear encoder ``psi^T x``
(with ``psi = W.T``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, ValidationError

ACTIVATIONS = ("identity", "tanh", "sigmoid", "relu")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValidationError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.maximum(z, 0.0)


def _act_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Derivative of the activation, given pre-activation ``z`` and output ``h``."""
    if name == "identity":
        return np.ones_like(z)
    if name == "tanh":
        return 1.0 - h * h
    if name == "sigmoid":
        return h * (1.0 - h)
    # relu'(0) := 0
    return (z > 0).astype(np.float64)


def mlp_specs(
    in_dim: int,
    hidden: Sequence[int],
    out_dim: int,
    activation: str = "tanh",
    output_activation: str | None = None,
) -> list[LayerSpec]:
    """Layer chain ``in_dim -> hidden... -> out_dim``."""
    widths = [in_dim, *hidden, out_dim]
    acts = [activation] * (len(widths) - 2) + [output_activation or activation]
    return [LayerSpec(a, b, f) for a, b, f in zip(widths[:-1], widths[1:], acts)]


def linear_specs(in_dim: int, out_dim: int) -> list[LayerSpec]:
    return [LayerSpec(in_dim, out_dim, "identity")]


def check_specs(specs: Sequence[Sequence[LayerSpec]]) -> int:
    """Validate a per-view list of layer chains; return the shared width K."""
    if not specs:
        raise ValidationError("need at least one view")
    K = None
    for d, chain in enumerate(specs, 1):
        if not chain:
            raise ValidationError(f"view {d}: empty layer chain")
        for a, b in zip(chain[:-1], chain[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionMismatchError(
                    f"view {d}: layer output {a.out_dim} does not feed layer input {b.in_dim}"
                )
        if K is None:
            K = chain[-1].out_dim
        elif chain[-1].out_dim != K:
            raise DimensionMismatchError(
                f"view {d}: output width {chain[-1].out_dim} differs from K={K}"
            )
    return K


class EncoderStack:
    """Layer specs and parameters for all views.

    ``params[d - 1][l]`` is the ``(W, b)`` pair of layer ``l`` of view ``d``,
    with ``W`` of shape ``(out_dim, in_dim)``.
    """

    def __init__(self, specs: Sequence[Sequence[LayerSpec]], params):
        self.specs = [list(chain) for chain in specs]
        self.K = check_specs(self.specs)
        if len(params) != len(self.specs):
            raise ValidationError(f"params cover {len(params)} views, specs cover {len(self.specs)}")
        self.params = []
        for d, (chain, layers) in enumerate(zip(self.specs, params), 1):
            if len(layers) != len(chain):
                raise ValidationError(f"view {d}: {len(layers)} parameter layers for {len(chain)} specs")
            view_params = []
            for spec, (W, b) in zip(chain, layers):
                W = np.array(W, dtype=np.float64)
                b = np.array(b, dtype=np.float64).ravel()
                if W.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                    raise DimensionMismatchError(
                        f"view {d}: parameter shapes {W.shape}/{b.shape} do not match {spec}"
                    )
                if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                    raise ValidationError(f"view {d}: non-finite parameters")
                view_params.append((W, b))
            self.params.append(view_params)

    @property
    def num_views(self) -> int:
        return len(self.specs)

    def input_dim(self, view: int) -> int:
        return self.specs[view - 1][0].in_dim

    def copy(self) -> "EncoderStack":
        return EncoderStack(self.specs, [[(W.copy(), b.copy()) for W, b in v] for v in self.params])

    def arrays(self) -> list[np.ndarray]:
        """Flat list of every parameter array (views, then layers, W before b)."""
        return [a for view in self.params for layer in view for a in layer]

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def assign(self, flat: np.ndarray) -> None:
        """Overwrite parameters in place from :meth:`flatten` layout."""
        pos = 0
        for a in self.arrays():
            a[...] = flat[pos : pos + a.size].reshape(a.shape)
            pos += a.size

    def forward(self, view: int, X: np.ndarray, keep: bool = False):
        """Encode rows of ``X`` (or a single vector) for ``view``.

        With ``keep=True`` also return the per-layer cache needed by
        :meth:`backward`.
        """
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        H = X[None, :] if single else X
        p = self.input_dim(view)
        if H.shape[1] != p:
            raise DimensionMismatchError(f"view {view}: input length {H.shape[1]} != {p}")
        cache = [H]
        for spec, (W, b) in zip(self.specs[view - 1], self.params[view - 1]):
            Z = H @ W.T + b
            H = _act(spec.activation, Z)
            cache.append((Z, H))
        Y = H[0] if single else H
        return (Y, cache) if keep else Y

    def backward(self, view: int, cache, grad_Y: np.ndarray, input_grad: bool = False):
        """Reverse-mode pass for one view.

        Returns a list of ``(dW, db)`` per layer, summed over rows, and when
        ``input_grad`` is set also ``dL/dX``.
        """
        G = np.asarray(grad_Y, dtype=np.float64)
        single = G.ndim == 1
        if single:
            G = G[None, :]
        grads = []
        layers = list(zip(self.specs[view - 1], self.params[view - 1]))
        for k in range(len(layers) - 1, -1, -1):
            spec, (W, _) = layers[k]
            Z, H = cache[k + 1]
            if G.shape != H.shape:
                raise DimensionMismatchError(f"view {view}: gradient shape {G.shape} != {H.shape}")
            H_in = cache[k] if k == 0 else cache[k][1]
            dZ = G * _act_grad(spec.activation, Z, H)
            grads.append((dZ.T @ H_in, dZ.sum(axis=0)))
            G = dZ @ W
        grads.reverse()
        if input_grad:
            return grads, (G[0] if single else G)
        return grads


def init_params(specs, seed: int, scheme: str = "uniform_fanin") -> EncoderStack:
    """Glorot-uniform weights ``U[-a, a]``, ``a = sqrt(6 / (in + out))``; zero biases."""
    if scheme != "uniform_fanin":
        raise ValidationError(f"unknown init scheme {scheme!r}")
    check_specs(specs)
    rng = np.random.default_rng(seed)
    params = []
    for chain in specs:
        layers = []
        for s in chain:
            a = np.sqrt(6.0 / (s.in_dim + s.out_dim))
            layers.append((rng.uniform(-a, a, size=(s.out_dim, s.in_dim)), np.zeros(s.out_dim)))
        params.append(layers)
    return EncoderStack(specs, params)


def forward(stack: EncoderStack, view: int, x: np.ndarray) -> np.ndarray:
    return stack.forward(view, x)


def backward(stack: EncoderStack, view: int, x: np.ndarray, grad_y: np.ndarray, input_grad: bool = False):
    _, cache = stack.forward(view, x, keep=True)
    return stack.backward(view, cache, grad_y, input_grad=input_grad)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"PMVGEENC"
VERSION = 1
_ACT_CODE = {name: k for k, name in enumerate(ACTIVATIONS)}


def write_encoders(fh, stack: EncoderStack) -> None:
    """Header (magic, version, D, layer specs) then row-major float64 LE arrays."""
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, stack.num_views))
    for chain in stack.specs:
        fh.write(struct.pack("<I", len(chain)))
        for s in chain:
            fh.write(struct.pack("<III", s.in_dim, s.out_dim, _ACT_CODE[s.activation]))
    for a in stack.arrays():
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_encoders(fh) -> EncoderStack:
    if fh.read(len(MAGIC)) != MAGIC:
        raise ValidationError("not an encoder checkpoint (bad magic)")
    version, D = struct.unpack("<II", fh.read(8))
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    specs = []
    for _ in range(D):
        (L,) = struct.unpack("<I", fh.read(4))
        chain = []
        for _ in range(L):
            a, b, c = struct.unpack("<III", fh.read(12))
            chain.append(LayerSpec(a, b, ACTIVATIONS[c]))
        specs.append(chain)

    def take(shape):
        count = int(np.prod(shape))
        buf = fh.read(8 * count)
        if len(buf) != 8 * count:
            raise ValidationError("truncated checkpoint")
        return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)

    params = [[(take((s.out_dim, s.in_dim)), take((s.out_dim,))) for s in chain] for chain in specs]
    return EncoderStack(specs, params)


def dims_manifest(stack: EncoderStack) -> str:
    lines = [f"views {stack.num_views}", f"K {stack.K}"]
    for d, chain in enumerate(stack.specs, 1):
        for k, s in enumerate(chain):
            lines.append(f"view {d} layer {k} {s.in_dim} -> {s.out_dim} {s.activation}")
    return "\n".join(lines) + "\n"


def save_encoders(path, stack: EncoderStack) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        write_encoders(fh, stack)
    path.with_name(path.name + ".dims.txt").write_text(dims_manifest(stack))


def load_encoders(path) -> EncoderStack:
    with open(path, "rb") as fh:
        return read_encoders(fh)
