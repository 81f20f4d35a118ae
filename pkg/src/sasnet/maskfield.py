"""Spatially-adaptive group masks from a multiresolution hash grid and a small decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import autodiff as ad

HASH_PRIMES = (1, 2654435761)


def level_resolutions(levels: int, base: int, finest: int) -> list[int]:
    if levels == 1:
        return [base]
    growth = (finest / base) ** (1.0 / (levels - 1))
    # the epsilon keeps exact powers (e.g. the finest level) from flooring down
    return [int(math.floor(base * growth**l + 1e-9)) for l in range(levels)]


@dataclass
class LevelCorners:
    """Per-level bilinear stencil of a coordinate batch."""

    idx: np.ndarray  # (N, 4) table rows
    w: np.ndarray  # (N, 4) weights, rows sum to 1
    dw: np.ndarray  # (N, 4, 2) d weight / d coord


class HashGrid:
    """2D multiresolution grid of trainable feature tables.

    Coarse levels whose (res + 1)^2 vertices fit in ``table_size`` are stored
    densely; finer ones are spatially hashed.
    """

    def __init__(self, levels=10, base_res=4, finest_res=128, table_size=512, feature_dim=2,
                 rng: np.random.Generator | None = None, init_scale=1e-4):
        self.resolutions = level_resolutions(levels, base_res, finest_res)
        if any(b < a for a, b in zip(self.resolutions, self.resolutions[1:])):
            raise ValueError(f"level resolutions must be nondecreasing: {self.resolutions}")
        self.table_size = table_size
        self.feature_dim = feature_dim
        self.dense = [(r + 1) ** 2 <= table_size for r in self.resolutions]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.tables = []
        for l, r in enumerate(self.resolutions):
            rows = (r + 1) ** 2 if self.dense[l] else table_size
            self.tables.append(ad.Tensor(rng.uniform(-init_scale, init_scale, size=(rows, feature_dim)),
                                         requires_grad=True, name=f"grid.level{l}.table"))

    @property
    def levels(self) -> int:
        return len(self.resolutions)

    @property
    def out_dim(self) -> int:
        return self.levels * self.feature_dim

    def vertex_index(self, level: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        r = self.resolutions[level]
        if self.dense[level]:
            return i + j * (r + 1)
        h = (i.astype(np.uint64) * np.uint64(HASH_PRIMES[0])) ^ (j.astype(np.uint64) * np.uint64(HASH_PRIMES[1]))
        h &= np.uint64(0xFFFFFFFF)
        return (h % np.uint64(self.table_size)).astype(np.int64)

    def corners(self, coords: np.ndarray) -> list[LevelCorners]:
        """Bilinear stencils for coords in [-1, 1]^2 (clamped); x = coords[:, 0]."""
        u = (np.clip(coords, -1.0, 1.0) + 1.0) * 0.5
        out = []
        for l, r in enumerate(self.resolutions):
            pos = u * r
            cell = np.minimum(np.floor(pos), r - 1).astype(np.int64)
            f = pos - cell
            fx, fy = f[:, 0], f[:, 1]
            i0, j0 = cell[:, 0], cell[:, 1]
            idx = np.stack([
                self.vertex_index(l, i0, j0),
                self.vertex_index(l, i0 + 1, j0),
                self.vertex_index(l, i0, j0 + 1),
                self.vertex_index(l, i0 + 1, j0 + 1),
            ], axis=1)
            w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
            s = 0.5 * r  # d pos / d coord
            dwdx = np.stack([-(1 - fy), (1 - fy), -fy, fy], axis=1) * s
            dwdy = np.stack([-(1 - fx), -fx, (1 - fx), fx], axis=1) * s
            out.append(LevelCorners(idx, w, np.stack([dwdx, dwdy], axis=2)))
        return out

    def features(self, stencils: list[LevelCorners]) -> ad.Tensor:
        """Interpolated features, levels concatenated coarse to fine: (N, levels * F)."""
        return concat_levels([interpolate_level(t, c) for t, c in zip(self.tables, stencils)])

    def feature_jacobian(self, stencils: list[LevelCorners]) -> np.ndarray:
        """d features / d coords, shape (N, levels * F, 2)."""
        parts = []
        for t, c in zip(self.tables, stencils):
            vals = t.data[c.idx]  # (N, 4, F)
            parts.append(np.einsum("ncf,ncd->nfd", vals, c.dw))
        return np.concatenate(parts, axis=1)


def interpolate_level(table: ad.Tensor, c: LevelCorners) -> ad.Tensor:
    rows = table.shape[0]
    data = _kernels.gather_interp(table.data, c.idx, c.w)
    return ad.custom(data, (table,), lambda g: (_kernels.scatter_interp(np.ascontiguousarray(g), c.idx, c.w, rows),),
                     "grid_interp")


def concat_levels(parts: list[ad.Tensor]) -> ad.Tensor:
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)


def interpolate_features(grid: HashGrid, coords: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return grid.features(grid.corners(coords)).data


class MaskDecoder:
    """ReLU MLP with one hidden layer; sigmoid heads for the learned channels.

    ``n_channels`` counts every group mask; channels listed in ``fixed`` are
    emitted as exactly 1 and have no decoder output.
    """

    def __init__(self, in_dim: int, n_channels: int, width: int = 48, fixed=(),
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_channels = n_channels
        self.fixed = tuple(sorted(set(fixed)))
        self.learned = tuple(c for c in range(n_channels) if c not in self.fixed)
        b1 = 1.0 / math.sqrt(in_dim)
        b2 = 1.0 / math.sqrt(width)
        n_out = len(self.learned)
        self.W1 = ad.Tensor(rng.uniform(-b1, b1, size=(width, in_dim)), requires_grad=True, name="dec.W1")
        self.b1 = ad.Tensor(rng.uniform(-b1, b1, size=width), requires_grad=True, name="dec.b1")
        self.W2 = ad.Tensor(rng.uniform(-b2, b2, size=(n_out, width)), requires_grad=True, name="dec.W2")
        self.b2 = ad.Tensor(rng.uniform(-b2, b2, size=n_out), requires_grad=True, name="dec.b2")

    def parameters(self) -> dict[str, ad.Tensor]:
        return {"dec.W1": self.W1, "dec.b1": self.b1, "dec.W2": self.W2, "dec.b2": self.b2}

    def learned_masks(self, features) -> ad.Tensor:
        if features.shape[1] != self.W1.shape[1]:
            raise ad.ShapeError(f"decoder expects {self.W1.shape[1]} features, got {features.shape[1]}")
        hidden = ad.relu(ad.add(ad.matmul(features, ad.transpose(self.W1)), self.b1))
        return ad.sigmoid(ad.add(ad.matmul(hidden, ad.transpose(self.W2)), self.b2))

    @property
    def extended_column(self) -> np.ndarray:
        """Channel -> column of ``extend(learned)``; column 0 is the constant one."""
        col = np.zeros(self.n_channels, dtype=np.int64)
        for j, c in enumerate(self.learned):
            col[c] = j + 1
        return col

    def extend(self, learned: ad.Tensor) -> ad.Tensor:
        """Prepend a constant column of ones (no gradient flows into it)."""
        return ad.concat([ad.Tensor(np.ones((learned.shape[0], 1))), learned], axis=1)

    def assemble(self, learned: ad.Tensor) -> ad.Tensor:
        """All channels in order, fixed ones overwritten to exactly 1."""
        return ad.take_columns(self.extend(learned), self.extended_column)

    def jacobian(self, features: np.ndarray, dfeat: np.ndarray) -> np.ndarray:
        """d masks / d coords for all channels, (N, n_channels, 2); fixed channels are 0."""
        z1 = features @ self.W1.data.T + self.b1.data
        active = (z1 > 0).astype(np.float64)
        dz1 = np.einsum("hf,nfd->nhd", self.W1.data, dfeat) * active[:, :, None]
        z2 = np.maximum(z1, 0.0) @ self.W2.data.T + self.b2.data
        s = ad._sigmoid(z2)
        dm = np.einsum("gh,nhd->ngd", self.W2.data, dz1) * (s * (1 - s))[:, :, None]
        out = np.zeros((len(features), self.n_channels, 2))
        out[:, list(self.learned), :] = dm
        return out


class MaskField:
    """Hash grid + shared decoder emitting every group-mask channel."""

    def __init__(self, grid: HashGrid, decoder: MaskDecoder):
        self.grid = grid
        self.decoder = decoder

    @property
    def n_channels(self) -> int:
        return self.decoder.n_channels

    def parameters(self) -> dict[str, ad.Tensor]:
        params = {t.name: t for t in self.grid.tables}
        params.update(self.decoder.parameters())
        return params

    def prepare(self, coords: np.ndarray) -> list[LevelCorners]:
        return self.grid.corners(coords)

    def masks(self, stencils: list[LevelCorners]) -> tuple[ad.Tensor, ad.Tensor]:
        """(all channels with fixed ones inserted, learned channels only)."""
        learned = self.decoder.learned_masks(self.grid.features(stencils))
        return self.decoder.assemble(learned), learned

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        return decode_masks(self, coords)

    def spatial_gradient(self, coords: np.ndarray) -> np.ndarray:
        return mask_spatial_gradient(self, coords)


def decode_masks(field: MaskField, coords: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return field.masks(field.prepare(coords))[0].data


def mask_spatial_gradient(field: MaskField, coords: np.ndarray) -> np.ndarray:
    stencils = field.prepare(coords)
    with ad.no_grad():
        feats = field.grid.features(stencils).data
    return field.decoder.jacobian(feats, field.grid.feature_jacobian(stencils))


def even_groups(width: int, n_groups: int) -> np.ndarray:
    """Contiguous near-equal split of ``width`` neurons into ``n_groups`` groups."""
    if n_groups < 1 or n_groups > width:
        raise ValueError(f"cannot split {width} neurons into {n_groups} groups")
    return (np.arange(width) * n_groups) // width


def broadcast_to_neurons(masks, channel_of_neuron: np.ndarray):
    """Per-neuron mask columns; works on Tensors and plain arrays."""
    if isinstance(masks, ad.Tensor):
        return ad.take_columns(masks, channel_of_neuron)
    return np.asarray(masks)[:, channel_of_neuron]
