"""Sinusoidal networks: SASNet (frozen frequency embedding + masked sine layers) and SIREN."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from ._kernels import sincos
from .embedding import FrequencyEmbedding
from .maskfield import LevelCorners, MaskField

# SIREN's hidden-layer frequency. Folded into the hidden weights at init, so it
# reappears only as the output-head init scale and the hidden learning-rate scale.
HIDDEN_OMEGA = 30.0


@dataclass
class SirenInitConfig:
    omega0: float = 30.0
    hidden_c: float = 6.0

    def __post_init__(self):
        if not self.omega0 > 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")


class SineLayer:
    """sin(omega * (x W^T + b)); hidden layers use omega = 1 (frequency folded into W)."""

    def __init__(self, W: np.ndarray, b: np.ndarray, name: str, omega: float = 1.0, trainable: bool = True,
                 lr_scale: float = 1.0):
        self.W = ad.Tensor(W, requires_grad=trainable, name=f"{name}.W")
        self.b = ad.Tensor(b, requires_grad=trainable, name=f"{name}.b")
        self.name = name
        self.omega = float(omega)
        self.trainable = trainable
        self.lr_scale = float(lr_scale)

    @property
    def width(self) -> int:
        return self.W.shape[0]

    def parameters(self) -> dict[str, ad.Tensor]:
        return {self.W.name: self.W, self.b.name: self.b}

    def preactivation(self, x) -> ad.Tensor:
        z = ad.add(ad.matmul(x, ad.transpose(self.W)), self.b)
        if self.omega != 1.0:
            z = ad.mul(z, self.omega)
        return z

    def __call__(self, x) -> ad.Tensor:
        return ad.sin(self.preactivation(x))


def siren_init(fan_in: int, fan_out: int, rng: np.random.Generator, first: bool = False,
               cfg: SirenInitConfig | None = None):
    """Draw (W, b) for a sine layer.

    First layer: W ~ U(-1/n, 1/n), used as sin(omega0 (Wx + b)).
    Hidden layers: W ~ U(-sqrt(c/n), sqrt(c/n)), used as sin(Wx + b).
    Biases: U(-1/sqrt(n), 1/sqrt(n)).
    """
    if fan_in <= 0:
        raise ValueError("siren_init: fan_in must be positive")
    cfg = cfg or SirenInitConfig()
    bound = 1.0 / fan_in if first else math.sqrt(cfg.hidden_c / fan_in)
    W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    b = rng.uniform(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in), size=fan_out)
    return W, b


def head_init(fan_in: int, out_channels: int, rng: np.random.Generator, cfg: SirenInitConfig | None = None):
    cfg = cfg or SirenInitConfig()
    bound = math.sqrt(cfg.hidden_c / fan_in) / HIDDEN_OMEGA
    W = rng.uniform(-bound, bound, size=(out_channels, fan_in))
    b = rng.uniform(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in), size=out_channels)
    return W, b


@dataclass
class Prepared:
    """Per-coordinate quantities that stay constant while parameters change."""

    coords: np.ndarray
    embed: np.ndarray | None = None
    stencils: list[LevelCorners] | None = None

    def subset(self, rows: np.ndarray) -> "Prepared":
        stencils = None
        if self.stencils is not None:
            stencils = [LevelCorners(c.idx[rows], c.w[rows], c.dw[rows]) for c in self.stencils]
        embed = None if self.embed is None else self.embed[rows]
        return Prepared(self.coords[rows], embed, stencils)


@dataclass
class ForwardResult:
    output: ad.Tensor
    learned_masks: ad.Tensor | None


class SasnetModel:
    """Frozen frequency embedding (or a SIREN first layer), masked hidden sine layers, linear head.

    ``bindings[i]`` maps every neuron of layer i (0 = first layer) to its mask
    channel, or is None when that layer is unmasked. ``layer_groups[i]`` holds
    the channel ids of layer i's groups in ascending group order.
    """

    def __init__(self, first: FrequencyEmbedding | SineLayer, hidden: list[SineLayer], head: SineLayer,
                 mask_field: MaskField | None = None, bindings: list[np.ndarray | None] | None = None,
                 layer_groups: list[list[int]] | None = None):
        self.first = first
        self.hidden = hidden
        self.head = head
        self.mask_field = mask_field
        n_layers = 1 + len(hidden)
        self.bindings = bindings if bindings is not None else [None] * n_layers
        self.layer_groups = layer_groups if layer_groups is not None else [[] for _ in range(n_layers)]
        if len(self.bindings) != n_layers:
            raise ValueError(f"expected {n_layers} mask bindings, got {len(self.bindings)}")
        widths = [self.layer_width(i) for i in range(n_layers)]
        for i, bind in enumerate(self.bindings):
            if bind is None:
                continue
            if mask_field is None:
                raise ValueError(f"layer {i} is masked but the model has no mask field")
            if len(bind) != widths[i]:
                raise ValueError(f"layer {i}: {len(bind)} neuron bindings for {widths[i]} neurons")
            if bind.min() < 0 or bind.max() >= mask_field.n_channels:
                raise ValueError(f"layer {i}: binding outside the {mask_field.n_channels} mask channels")

    @property
    def uses_embedding(self) -> bool:
        return isinstance(self.first, FrequencyEmbedding)

    @property
    def out_channels(self) -> int:
        return self.head.W.shape[0]

    def layer_width(self, i: int) -> int:
        if i == 0:
            return self.first.width
        return self.hidden[i - 1].width

    def snn_parameters(self) -> dict[str, ad.Tensor]:
        params: dict[str, ad.Tensor] = {}
        if isinstance(self.first, SineLayer):
            params.update(self.first.parameters())
        for layer in self.hidden:
            params.update(layer.parameters())
        params.update(self.head.parameters())
        return params

    def mask_parameters(self) -> dict[str, ad.Tensor]:
        return self.mask_field.parameters() if self.mask_field is not None else {}

    def frozen_tensors(self) -> dict[str, np.ndarray]:
        if self.uses_embedding:
            return {"embed.k": self.first.multipliers, "embed.phi": self.first.phases}
        return {}

    def parameter_counts(self) -> dict[str, int]:
        snn = sum(p.data.size for p in self.snn_parameters().values())
        mask = sum(p.data.size for p in self.mask_parameters().values())
        frozen = 3 * self.first.width if self.uses_embedding else 0  # k (2 per row) + phase
        return {"snn": snn, "mask": mask, "trainable": snn + mask, "frozen": frozen, "total": snn + mask + frozen}

    def learned_channels_of_layer(self, i: int) -> list[int]:
        """Positions in the learned-mask matrix of layer i's learned groups."""
        if self.mask_field is None:
            return []
        learned = self.mask_field.decoder.learned
        return [learned.index(c) for c in self.layer_groups[i] if c in learned]

    # -- evaluation ---------------------------------------------------------

    def prepare(self, coords: np.ndarray) -> Prepared:
        coords = np.asarray(coords, dtype=np.float64)
        embed = self.first(coords) if self.uses_embedding else None
        stencils = self.mask_field.prepare(coords) if self.mask_field is not None else None
        return Prepared(coords, embed, stencils)

    def forward(self, prep: Prepared, masks_override: list[np.ndarray | None] | None = None) -> ForwardResult:
        """Run the model on prepared coordinates.

        ``masks_override`` replaces the decoded masks with fixed per-layer
        (N, width) arrays; entries of None leave that layer unmasked.
        """
        learned = extended = None
        if self.mask_field is not None and masks_override is None:
            dec = self.mask_field.decoder
            learned = dec.learned_masks(self.mask_field.grid.features(prep.stencils))
            extended = dec.extend(learned)
            ext_col = dec.extended_column

        def apply_mask(i, h):
            if masks_override is not None:
                m = masks_override[i]
                if m is None:
                    return h
                m = np.asarray(m, dtype=np.float64)
                if m.shape != h.shape:
                    raise ad.ShapeError(f"layer {i}: mask shape {m.shape} does not match activations {h.shape}")
                return ad.mul(h, ad.Tensor(m))
            if self.bindings[i] is None:
                return h
            return ad.mul_columns(h, extended, ext_col[self.bindings[i]])

        if self.uses_embedding:
            h = ad.Tensor(prep.embed)
        else:
            h = self.first(ad.Tensor(prep.coords))
        h = apply_mask(0, h)
        for i, layer in enumerate(self.hidden, start=1):
            h = apply_mask(i, layer(h))
        out = self.head.preactivation(h)
        return ForwardResult(out, learned)

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        return self.evaluate(coords)

    def evaluate(self, coords: np.ndarray, chunk: int = 65536) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        outs = []
        with ad.no_grad():
            for s in range(0, len(coords), chunk):
                outs.append(self.forward(self.prepare(coords[s:s + chunk])).output.data)
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.out_channels))

    def masks(self, coords: np.ndarray) -> np.ndarray | None:
        """All mask channels at ``coords`` (fixed channels are exactly 1)."""
        if self.mask_field is None:
            return None
        return self.mask_field(coords)

    def activations(self, coords: np.ndarray) -> list[np.ndarray]:
        """Masked activations of every sine layer."""
        coords = np.asarray(coords, dtype=np.float64)
        masks = self.masks(coords)
        acts = []
        if self.uses_embedding:
            h = self.first(coords)
        else:
            h = sincos(self.first.omega * (coords @ self.first.W.data.T + self.first.b.data))[0]
        for i in range(1 + len(self.hidden)):
            if i > 0:
                layer = self.hidden[i - 1]
                h = sincos(h @ layer.W.data.T + layer.b.data)[0]
            if self.bindings[i] is not None:
                h = h * masks[:, self.bindings[i]]
            acts.append(h)
        return acts


def spatial_gradient(model: SasnetModel, coords: np.ndarray, masks: np.ndarray | None = None,
                     mask_gradients: np.ndarray | None = None, chunk: int = 4096) -> np.ndarray:
    """Exact d output / d coords, shape (N, C, 2), by forward-mode chain rule.

    Masks and their coordinate gradients are taken from the model's mask field
    unless given as (N, G) and (N, G, 2) arrays.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    out = np.zeros((n, model.out_channels, 2))
    for s in range(0, n, chunk):
        sl = slice(s, min(n, s + chunk))
        c = coords[sl]
        if model.mask_field is not None:
            m_all = masks[sl] if masks is not None else model.mask_field(c)
            dm_all = mask_gradients[sl] if mask_gradients is not None else model.mask_field.spatial_gradient(c)
        if model.uses_embedding:
            h = model.first(c)
            dh = model.first.jacobian(c)
        else:
            layer = model.first
            z = layer.omega * (c @ layer.W.data.T + layer.b.data)
            h, cz = sincos(z)
            dh = cz[:, :, None] * (layer.omega * layer.W.data)[None, :, :]
        for i in range(1 + len(model.hidden)):
            if i > 0:
                layer = model.hidden[i - 1]
                z = h @ layer.W.data.T + layer.b.data
                dz = np.einsum("nid,oi->nod", dh, layer.W.data)
                h, cz = sincos(z)
                dh = cz[:, :, None] * dz
            bind = model.bindings[i]
            if bind is not None:
                m, dm = m_all[:, bind], dm_all[:, bind]
                dh = dm * h[:, :, None] + m[:, :, None] * dh
                h = m * h
        out[sl] = np.einsum("nid,ci->ncd", dh, model.head.W.data)
    return out


def contribution_map(model: SasnetModel, coords: np.ndarray, layer: int) -> np.ndarray:
    """Per-neuron contribution h~_j(x) * sum_l W_next[l, j], shape (N, width).

    ``layer`` 0 is the first (embedding) layer; the last valid index is the
    final hidden layer, whose outgoing weights are the output head.
    """
    n_layers = 1 + len(model.hidden)
    if not 0 <= layer < n_layers:
        raise ValueError(f"contribution maps exist for layers 0..{n_layers - 1}, got {layer}")
    act = model.activations(coords)[layer]
    nxt = model.hidden[layer].W.data if layer < len(model.hidden) else model.head.W.data
    return act * nxt.sum(axis=0)[None, :]


class SirenNet:
    """Plain SIREN: sin(omega0 (W x + b)) first layer, folded hidden sine layers, linear head."""

    def __init__(self, first: SineLayer, hidden: list[SineLayer], head: SineLayer):
        self.first = first
        self.hidden = hidden
        self.head = head

    @classmethod
    def create(cls, widths: list[int], out_channels: int, rng: np.random.Generator,
               cfg: SirenInitConfig | None = None) -> "SirenNet":
        cfg = cfg or SirenInitConfig()
        W, b = siren_init(2, widths[0], rng, first=True, cfg=cfg)
        first = SineLayer(W, b, "first", omega=cfg.omega0)
        hidden = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            W, b = siren_init(fan_in, fan_out, rng, cfg=cfg)
            hidden.append(SineLayer(W, b, f"hidden{i}", lr_scale=HIDDEN_OMEGA))
        W, b = head_init(widths[-1], out_channels, rng, cfg)
        return cls(first, hidden, SineLayer(W, b, "head"))

    def parameters(self) -> dict[str, ad.Tensor]:
        params = dict(self.first.parameters())
        for layer in self.hidden:
            params.update(layer.parameters())
        params.update(self.head.parameters())
        return params

    def forward(self, coords: np.ndarray) -> ad.Tensor:
        x = ad.Tensor(coords)
        z = ad.add(ad.matmul(x, ad.transpose(self.first.W)), self.first.b)
        h = ad.sin(ad.mul(z, self.first.omega))
        for layer in self.hidden:
            h = ad.sin(ad.add(ad.matmul(h, ad.transpose(layer.W)), layer.b))
        return ad.add(ad.matmul(h, ad.transpose(self.head.W)), self.head.b)
