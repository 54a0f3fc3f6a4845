"""Generator (channel attention front + U-Net) and conditional discriminator."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, StateError
from .tensor import Tensor

INIT_STD = 0.02


class Module:
    """Minimal parameter container: ordered params plus non-trainable buffers."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()
        self.training = True

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        return t

    def buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float32)

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, c in self._children.items():
            yield from c.named_parameters(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, c in self._children.items():
            yield from c.named_buffers(f"{prefix}{cname}.")

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Every parameter and buffer, in declaration order."""
        out = OrderedDict((n, p.value) for n, p in self.named_parameters())
        out.update(self.named_buffers())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            _assign(p.value, arrays[name], name)
        for name, b in self.named_buffers():
            _assign(b, arrays[name], name)

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for c in self._children.values():
            c.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        T.zero_grads(self.parameters())


def _assign(dst: np.ndarray, src: np.ndarray, name: str) -> None:
    if dst.shape != src.shape:
        raise ShapeError(f"{name}: stored shape {src.shape} != model shape {dst.shape}")
    dst[...] = src


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.param("gamma", np.ones(channels))
        self.beta = self.param("beta", np.zeros(channels))
        self.buffer("running_mean", np.zeros(channels))
        self.buffer("running_var", np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            out, mu, var = T.batch_norm(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            n = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * (n / max(n - 1, 1))
            rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
            rm[...] = (1 - m) * rm + m * mu
            rv[...] = (1 - m) * rv + m * unbiased
            return out
        c = x.shape[1]
        inv = 1.0 / np.sqrt(self._buffers["running_var"] + self.eps)
        shift = Tensor((-self._buffers["running_mean"] * inv).reshape(1, c, 1, 1).astype(x.dtype))
        scaled = T.add(T.mul(x, Tensor(inv.reshape(1, c, 1, 1).astype(x.dtype))), shift)
        return T.add(T.mul(scaled, T.reshape(self.gamma, (1, c, 1, 1))), T.reshape(self.beta, (1, c, 1, 1)))


class Conv(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int, padding: int, rng: np.random.Generator):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = self.param("weight", rng.normal(0, INIT_STD, size=(cout, cin, k, k)))
        self.bias = self.param("bias", np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int, padding: int, rng: np.random.Generator):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = self.param("weight", rng.normal(0, INIT_STD, size=(cin, cout, k, k)))
        self.bias = self.param("bias", np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d_transpose(x, self.weight, self.bias, self.stride, self.padding)


class Dense(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator, std: float = INIT_STD):
        super().__init__()
        self.weight = self.param("weight", rng.normal(0, std, size=(fout, fin)))
        self.bias = self.param("bias", np.zeros(fout))

    def __call__(self, x: Tensor) -> Tensor:
        return T.dense(x, self.weight, self.bias)


class SEBlock(Module):
    """Squeeze-and-excitation channel attention.

    Each channel is squeezed to its spatial mean, mapped through one or two
    fully connected layers, and squashed by a sigmoid into a weight in
    ``[0, 1]`` that rescales the channel.  The most recent weights are kept in
    :attr:`last_weights` for attention reports.
    """

    def __init__(self, channels: int, reduction: int = 4, single_layer: bool = False, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if reduction < 1:
            raise ConfigError(f"SE reduction must be a positive int, got {reduction}")
        self.channels = channels
        self.reduction = reduction
        self.single_layer = single_layer
        self.hidden = max(1, channels // reduction)
        if single_layer:
            self.fc = self.child("fc", Dense(channels, channels, rng))
        else:
            self.fc1 = self.child("fc1", Dense(channels, self.hidden, rng))
            # positive bias keeps the excitation ReLUs alive at initialization
            self.fc1.bias.value[...] = 0.1
            self.fc2 = self.child("fc2", Dense(self.hidden, channels, rng))
        self.last_weights: np.ndarray | None = None

    def excitation(self, x: Tensor) -> Tensor:
        if x.value.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"SEBlock configured for {self.channels} channels, got input {x.shape}")
        b = x.shape[0]
        squeezed = T.reshape(T.global_avg_pool(x), (b, self.channels))
        if self.single_layer:
            return T.sigmoid(self.fc(squeezed))
        return T.sigmoid(self.fc2(T.relu(self.fc1(squeezed))))

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        w = self.excitation(x)
        self.last_weights = w.value.copy()
        b = x.shape[0]
        return T.mul(x, T.reshape(w, (b, self.channels, 1, 1))), w


def se_forward(se: SEBlock, x) -> tuple[Tensor, Tensor]:
    return se(x if isinstance(x, Tensor) else Tensor(x))


@dataclass
class GeneratorConfig:
    in_channels: int
    out_channels: int = 3
    filters: tuple[int, ...] = (32, 64, 128, 256, 256)
    kernel_size: int = 4
    dropout_rate: float = 0.5
    dropout_levels: int = 3
    se_reduction: int = 4
    se_single_layer: bool = False
    noise_channel: bool = False
    bn_momentum: float = 0.1

    @property
    def depth(self) -> int:
        return len(self.filters)

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigError("generator needs at least one input channel")
        if self.depth < 2:
            raise ConfigError("U-Net depth must be at least 2")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


class Generator(Module):
    """Channel attention front followed by a U-Net with mirrored skips.

    Encoder level ``i`` halves the grid; decoder level ``j`` doubles it and,
    except for the innermost level, first concatenates its input with the
    output of encoder level ``depth - 1 - j`` (the mirror of its output
    resolution).  The head is a tanh, so outputs lie in ``(-1, 1)``.
    Dropout in the innermost decoder levels plays the role of the noise
    input and is only active in training mode.
    """

    def __init__(self, config: GeneratorConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        f = list(config.filters)
        n, k = config.depth, config.kernel_size
        pad = (k - 2) // 2
        se_channels = config.in_channels + (1 if config.noise_channel else 0)
        self.se = self.child("se", SEBlock(se_channels, config.se_reduction, config.se_single_layer, rng))

        self.encoders: list[tuple[Conv, BatchNorm | None]] = []
        cin = se_channels
        for i in range(n):
            conv = self.child(f"enc{i}", Conv(cin, f[i], k, 2, pad, rng))
            bn = self.child(f"enc{i}_bn", BatchNorm(f[i], config.bn_momentum)) if i > 0 else None
            self.encoders.append((conv, bn))
            cin = f[i]

        self.decoders: list[tuple[ConvTranspose, BatchNorm | None]] = []
        self.skip_table: list[tuple[int, int, int]] = []
        for j in range(n):
            up_in = f[n - 1] if j == 0 else 2 * f[n - 1 - j]
            cout = f[n - 2 - j] if j < n - 1 else config.out_channels
            conv = self.child(f"dec{j}", ConvTranspose(up_in, cout, k, 2, pad, rng))
            last = j == n - 1
            bn = None if last else self.child(f"dec{j}_bn", BatchNorm(cout, config.bn_momentum))
            self.decoders.append((conv, bn))
            if not last:
                # (concatenated input of next level, its upsampled part, its mirrored skip part)
                self.skip_table.append((2 * cout, cout, f[n - 2 - j]))
        self.noise_rng = np.random.default_rng(seed + 1)

    @property
    def depth(self) -> int:
        return self.config.depth

    def check_input(self, x: Tensor) -> None:
        if x.value.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"generator expects Bx{self.config.in_channels}xHxW input, got {x.shape}")
        m = 2**self.depth
        if x.shape[2] % m or x.shape[3] % m:
            raise ConfigError(f"spatial extents {x.shape[2:]} must be divisible by 2^depth = {m}")

    def __call__(self, x, rng: np.random.Generator | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        self.check_input(x)
        if self.config.noise_channel:
            noise_src = rng if (self.training and rng is not None) else self.noise_rng_for_eval()
            z = noise_src.standard_normal((x.shape[0], 1) + x.shape[2:]).astype(x.dtype)
            x = T.concat_channels(x, Tensor(z))
        h, _ = self.se(x)
        skips = []
        for i, (conv, bn) in enumerate(self.encoders):
            h = conv(h)
            if bn is not None:
                h = bn(h)
            h = T.leaky_relu(h)
            skips.append(h)
        n = self.depth
        h = skips[-1]
        for j, (conv, bn) in enumerate(self.decoders):
            if j > 0:
                h = T.concat_channels(h, skips[n - 1 - j])
            h = conv(h)
            if bn is None:
                return T.tanh(h)
            h = bn(h)
            if self.training and j < self.config.dropout_levels and self.config.dropout_rate > 0:
                if rng is None:
                    raise StateError("training-mode generator forward needs an rng for dropout")
                h = T.dropout(h, self.config.dropout_rate, rng)
            h = T.relu(h)
        raise AssertionError("unreachable")

    def noise_rng_for_eval(self) -> np.random.Generator:
        # a fresh, fixed stream keeps inference deterministic
        return np.random.default_rng(12345)


def generator_forward(g: Generator, x, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    g.train(training)
    return g(x, rng)


@dataclass
class DiscriminatorConfig:
    in_channels: int  # conditioning channels; the candidate image adds 3 more
    image_channels: int = 3
    filters: tuple[int, ...] = (32, 64, 128, 256)
    kernel_size: int = 4
    bn_momentum: float = 0.1


class Discriminator(Module):
    """Conditional classifier over the channel-concatenation of (x, y)."""

    def __init__(self, config: DiscriminatorConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        k = config.kernel_size
        pad = (k - 2) // 2
        cin = config.in_channels + config.image_channels
        self.layers: list[tuple[Conv, BatchNorm | None]] = []
        for i, f in enumerate(config.filters):
            conv = self.child(f"conv{i}", Conv(cin, f, k, 2, pad, rng))
            bn = self.child(f"conv{i}_bn", BatchNorm(f, config.bn_momentum)) if i > 0 else None
            self.layers.append((conv, bn))
            cin = f
        self.head = self.child("head", Dense(cin, 1, rng))

    @property
    def input_channels(self) -> int:
        return self.config.in_channels + self.config.image_channels

    def __call__(self, x, y) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        y = y if isinstance(y, Tensor) else Tensor(y)
        if x.value.ndim != 4 or y.value.ndim != 4 or x.shape[0] != y.shape[0] or x.shape[2:] != y.shape[2:]:
            raise ShapeError(f"discriminator inputs disagree: x {x.shape}, y {y.shape}")
        if x.shape[1] != self.config.in_channels or y.shape[1] != self.config.image_channels:
            raise ShapeError(
                f"discriminator expects {self.config.in_channels}+{self.config.image_channels} channels, "
                f"got {x.shape[1]}+{y.shape[1]}"
            )
        h = T.concat_channels(x, y)
        for conv, bn in self.layers:
            h = conv(h)
            if bn is not None:
                h = bn(h)
            h = T.leaky_relu(h)
        b, c = h.shape[:2]
        pooled = T.reshape(T.global_avg_pool(h), (b, c))
        return T.sigmoid(self.head(pooled))


def discriminator_forward(d: Discriminator, x, y) -> Tensor:
    return d(x, y)


# ---------------------------------------------------------------------------
# attention report
# ---------------------------------------------------------------------------

CATEGORY_LABELS = {
    "nwp_multilevel": "NWP products (multi-level elements)",
    "nwp_singlelevel": "NWP products (single level products)",
    "infrared": "Satellite infrared channels data",
    "noise": "Control channels",
}


@dataclass
class AttentionReport:
    """Per-channel excitation weights with grouped views.

    ``elements`` averages multi-level channels (named ``element@level``) over
    their levels; ``categories`` averages over every channel of a category.
    Both aggregates are means; the raw weights stay in ``channels``.
    """

    channels: list[tuple[str, str, float]]
    elements: list[tuple[str, str, float]] = field(default_factory=list)
    categories: dict[str, float] = field(default_factory=dict)
    aggregation: str = "mean"

    def weight(self, name: str) -> float:
        for n, _, w in self.channels:
            if n == name:
                return w
        raise KeyError(name)

    def rows(self) -> list[tuple[str, float]]:
        return [(name, round(w, 2)) for _, name, w in self.elements]

    def to_text(self) -> str:
        lines = ["# channel attention weights (excitation output, batch-averaged)", f"aggregation = {self.aggregation}"]
        lines.append("[elements]")
        current = None
        for cat, name, w in self.elements:
            if cat != current:
                lines.append(f"## {CATEGORY_LABELS.get(cat, cat)}")
                current = cat
            lines.append(f"{name}\t{w:.4f}")
        lines.append("[channels]")
        for name, cat, w in self.channels:
            lines.append(f"{name}\t{cat}\t{w:.6f}")
        lines.append("[categories]")
        for cat, w in self.categories.items():
            lines.append(f"{cat}\t{w:.6f}")
        return "\n".join(lines) + "\n"


def _element_of(name: str) -> str:
    return name.split("@", 1)[0]


def attention_weights(
    g: Generator, channel_names: Sequence[str], categories: Sequence[str] | None = None
) -> AttentionReport:
    if g.se.last_weights is None:
        raise StateError("no forward pass has populated the attention weights yet")
    names = list(channel_names)
    cats = list(categories) if categories is not None else ["input"] * len(names)
    if g.config.noise_channel:
        names.append("z-noise")
        cats.append("noise")
    weights = g.se.last_weights.mean(axis=0)
    if len(names) != weights.size or len(cats) != len(names):
        raise ShapeError(f"{len(names)} channel labels for {weights.size} attention weights")

    channels = [(n, c, float(w)) for n, c, w in zip(names, cats, weights)]
    grouped: "OrderedDict[tuple[str, str], list[float]]" = OrderedDict()
    by_cat: "OrderedDict[str, list[float]]" = OrderedDict()
    for n, c, w in channels:
        grouped.setdefault((c, _element_of(n)), []).append(w)
        by_cat.setdefault(c, []).append(w)
    elements = [(c, e, float(np.mean(ws))) for (c, e), ws in grouped.items()]
    return AttentionReport(
        channels=channels,
        elements=elements,
        categories={c: float(np.mean(ws)) for c, ws in by_cat.items()},
    )
