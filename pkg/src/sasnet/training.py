"""Joint optimization of the sine network and its mask field, plus checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from . import autodiff as ad
from .embedding import build_embedding, sample_multipliers
from .imaging import as_hwc, fd_gradient, pixel_coords, to_gray
from .maskfield import HashGrid, MaskDecoder, MaskField, even_groups
from .metrics import CannyParams, MetricReport, edge_partition, noisiness, psnr, psnr_edge, ssim
from .network import (
    SasnetModel,
    SineLayer,
    SirenInitConfig,
    SirenNet,
    Prepared,
    HIDDEN_OMEGA,
    head_init,
    siren_init,
    spatial_gradient,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


class NumericalFailure(RuntimeError):
    """Training produced a non-finite loss or gradient; ``state`` is the last good checkpoint."""

    def __init__(self, step: int, message: str, state: "Checkpoint"):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.state = state


@dataclass
class TrainConfig:
    name: str = "run"
    image: str = "toy"
    resolution: int = 256
    grayscale: bool = False
    model: str = "sasnet"
    steps: int = 5000
    lr_snn: float = 1e-4
    lr_mask: float = 5e-4
    lambda_l1: float = 1e-4
    lambda_sparse: float = 0.0
    n_mask: int = 4
    omega0: float = 43.0
    band_low: int = 12
    band_limit: int = 60
    n_band: int = 5
    low_fraction: float = 0.5
    embed_width: int = 400
    hidden_widths: list = field(default_factory=lambda: [116, 116])
    siren_widths: list = field(default_factory=list)
    hidden_groups: int = 8
    grid_levels: int = 10
    grid_base_res: int = 4
    grid_finest_res: int = 128
    grid_table_size: int = 512
    grid_features: int = 2
    decoder_width: int = 48
    use_embedding: bool = True
    mask_freq: bool = True
    mask_h1: bool = True
    mask_h2: bool = True
    seed: int = 0
    margin: float = 0.95
    batch: int = 0
    eval_every: int = 100
    canny_sigma: float = 1.4
    canny_low: float = 0.1
    canny_high: float = 0.2
    dilation_radius: int = 3

    def validate(self):
        p = []
        if self.model not in ("sasnet", "siren"):
            p.append(f"model: must be 'sasnet' or 'siren', got {self.model!r}")
        if self.steps < 0:
            p.append("steps: must be >= 0")
        for name in ("lr_snn", "lr_mask", "omega0"):
            if not getattr(self, name) > 0:
                p.append(f"{name}: must be > 0")
        for name in ("lambda_l1", "lambda_sparse"):
            if getattr(self, name) < 0:
                p.append(f"{name}: must be >= 0")
        if not 0 < self.band_low < self.band_limit:
            p.append(f"band_low: need 0 < band_low < band_limit, got {self.band_low} >= {self.band_limit}"
                     if self.band_low >= self.band_limit else "band_low: must be positive")
        if self.n_band < 1:
            p.append("n_band: must be >= 1")
        if not 0 <= self.low_fraction <= 1:
            p.append("low_fraction: must be in [0, 1]")
        if not 0 < self.margin <= 1:
            p.append("margin: must be in (0, 1]")
        if self.resolution < 2:
            p.append("resolution: must be >= 2")
        if not self.hidden_widths or any(int(w) < 1 for w in self.hidden_widths):
            p.append("hidden_widths: need at least one positive width")
        if any(int(w) < 1 for w in self.siren_widths):
            p.append("siren_widths: widths must be positive")
        if self.embed_width < 1:
            p.append("embed_width: must be positive")
        if self.hidden_groups < 1 or (self.hidden_widths and self.hidden_groups > min(self.hidden_widths)):
            p.append("hidden_groups: must be between 1 and the smallest hidden width")
        if self.grid_levels < 1 or self.grid_base_res < 1 or self.grid_finest_res < self.grid_base_res:
            p.append("grid_levels/grid_base_res/grid_finest_res: need levels >= 1 and finest >= base >= 1")
        if self.grid_table_size < 4 or self.grid_features < 1 or self.decoder_width < 1:
            p.append("grid_table_size/grid_features/decoder_width: must be positive (table >= 4)")
        if self.eval_every < 1:
            p.append("eval_every: must be >= 1")
        if self.batch < 0:
            p.append("batch: must be 0 (full) or a positive sample count")
        if self.mask_h2 and len(self.hidden_widths) < 2 and self.model == "sasnet":
            p.append("mask_h2: the network has no second hidden layer")
        if p:
            raise ConfigError(p)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        problems = [f"{k}: unknown field" for k in data if k not in names]
        kwargs = {}
        for k, v in data.items():
            if k not in names:
                continue
            default = getattr(cls(), k)
            try:
                kwargs[k] = _coerce(v, default)
            except (TypeError, ValueError):
                problems.append(f"{k}: expected {type(default).__name__}, got {v!r}")
        if problems:
            raise ConfigError(problems)
        return cls(**kwargs).validate()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _coerce(value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or int(value) != value:
            raise TypeError
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool):
            raise TypeError
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise TypeError
        return [int(v) for v in value]
    return str(value)


def load_config(path) -> TrainConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return TrainConfig.from_dict(tomllib.load(fh))


def dump_config_toml(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, bool):
            lines.append(f"{k} = {'true' if v else 'false'}")
        elif isinstance(v, str):
            lines.append(f"{k} = {json.dumps(v)}")
        else:
            lines.append(f"{k} = {v!r}")
    return "\n".join(lines) + "\n"


TOY_OVERRIDES = dict(
    image="toy", resolution=256, grayscale=True, embed_width=128, hidden_widths=[64], siren_widths=[102, 102],
    grid_table_size=64, decoder_width=24, mask_h2=False,
)


def toy_config(**changes) -> TrainConfig:
    """~11k trainable parameters on the 256x256 ring image."""
    return TrainConfig(**{**TOY_OVERRIDES, **changes}).validate()


ABLATION_ROWS = [
    # (use_embedding, mask_freq, mask_h1, mask_h2)
    (False, False, False, False),
    (True, False, False, False),
    (True, True, False, False),
    (True, True, True, False),
    (True, True, False, True),
    (True, False, True, False),
    (True, False, False, True),
    (False, True, True, True),
    (True, True, True, True),
]


def ablation_configs(cfg: TrainConfig) -> list[TrainConfig]:
    out = []
    for emb, mf, m1, m2 in ABLATION_ROWS:
        tag = "".join(ch if on else "-" for ch, on in zip("EF12", (emb, mf, m1, m2)))
        out.append(cfg.replace(name=f"{cfg.name}_{tag}", use_embedding=emb, mask_freq=mf, mask_h1=m1, mask_h2=m2))
    return out


# -- model construction -----------------------------------------------------------


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators so enabling one component never shifts another's draws."""
    names = ("embed", "snn", "mask", "batch")
    return {n: np.random.default_rng(s) for n, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def siren_widths(cfg: TrainConfig) -> list[int]:
    return list(cfg.siren_widths) or [cfg.embed_width, *cfg.hidden_widths]


def build_model(cfg: TrainConfig, out_channels: int, rngs: dict | None = None):
    rngs = rngs or rng_streams(cfg.seed)
    init = SirenInitConfig(omega0=cfg.omega0)
    if cfg.model == "siren":
        return SirenNet.create(siren_widths(cfg), out_channels, rngs["snn"], init)

    if cfg.use_embedding:
        k, groups = sample_multipliers(cfg.embed_width, cfg.band_low, cfg.band_limit, cfg.low_fraction,
                                       rngs["embed"], cfg.n_band)
        first = build_embedding(k, rngs["embed"], band_low=cfg.band_low, band_limit=cfg.band_limit,
                                n_band=cfg.n_band, groups=groups)
    else:
        W, b = siren_init(2, cfg.embed_width, rngs["snn"], first=True, cfg=init)
        first = SineLayer(W, b, "first", omega=cfg.omega0)
    hidden = []
    fan_in = cfg.embed_width
    for i, width in enumerate(cfg.hidden_widths, start=1):
        W, b = siren_init(fan_in, width, rngs["snn"], cfg=init)
        hidden.append(SineLayer(W, b, f"hidden{i}", lr_scale=HIDDEN_OMEGA))
        fan_in = width
    W, b = head_init(fan_in, out_channels, rngs["snn"], init)
    head = SineLayer(W, b, "head")

    # mask channel layout: first layer groups, then hidden layer 1, then hidden layer 2
    flags = [cfg.mask_freq, cfg.mask_h1, cfg.mask_h2][: 1 + len(hidden)]
    bindings, layer_groups, fixed = [], [], []
    n_channels = 0
    for i, on in enumerate(flags):
        if not on:
            bindings.append(None)
            layer_groups.append([])
            continue
        if i == 0 and cfg.use_embedding:
            group_of = first.group_of
            n_groups = first.n_groups
            fixed.append(n_channels)  # low band is always on
        else:
            width = first.width if i == 0 else hidden[i - 1].width
            group_of = even_groups(width, cfg.hidden_groups)
            n_groups = cfg.hidden_groups
        ids = list(range(n_channels, n_channels + n_groups))
        n_channels += n_groups
        bindings.append(np.asarray(ids, dtype=np.int64)[group_of])
        layer_groups.append(ids)
    bindings += [None] * (1 + len(hidden) - len(bindings))
    layer_groups += [[] for _ in range(1 + len(hidden) - len(layer_groups))]

    field_ = None
    if n_channels:
        grid = HashGrid(cfg.grid_levels, cfg.grid_base_res, cfg.grid_finest_res, cfg.grid_table_size,
                        cfg.grid_features, rng=rngs["mask"])
        decoder = MaskDecoder(grid.out_dim, n_channels, cfg.decoder_width, fixed=fixed, rng=rngs["mask"])
        field_ = MaskField(grid, decoder)
    return SasnetModel(first, hidden, head, field_, bindings, layer_groups)


def make_optimizer(model, cfg: TrainConfig) -> ad.Adam:
    """Adam with the sine network at lr_snn (scaled per layer) and the mask field at lr_mask.

    Folded hidden layers carry lr_scale = HIDDEN_OMEGA so their updates match an
    unfolded SIREN layer trained at lr_snn.
    """
    layers = [model.first, *model.hidden, model.head]
    groups = [(layer.parameters(), cfg.lr_snn * layer.lr_scale) for layer in layers if isinstance(layer, SineLayer)]
    groups.append((trainable_parameters(model)[1], cfg.lr_mask))
    return ad.Adam(groups)


def trainable_parameters(model) -> tuple[dict[str, ad.Tensor], dict[str, ad.Tensor]]:
    """(sine-network parameters, mask-field parameters)."""
    if isinstance(model, SirenNet):
        return model.parameters(), {}
    return model.snn_parameters(), model.mask_parameters()


# -- losses ------------------------------------------------------------------------


@dataclass
class LossTerms:
    total: ad.Tensor
    mse: float
    l1: float
    sparse: float


def loss(pred: ad.Tensor, gt: np.ndarray, learned: ad.Tensor | None, layer_channels: list[list[int]],
         cfg: TrainConfig) -> LossTerms:
    """MSE + lambda_l1 * L1 + lambda_sparse * Lsparse over the learned mask channels.

    L1 = (1/N) sum_{i,g,x} M, Lsparse = sum_{i,x} max(sum_g M - n_mask, 0).
    """
    mse = ad.mean(ad.square(ad.sub(pred, gt)))
    total = mse
    l1_val = sparse_val = 0.0
    if learned is not None and learned.shape[1] > 0:
        n = learned.shape[0]
        l1 = ad.mul(ad.sum(learned), 1.0 / n)
        l1_val = float(l1.data)
        if cfg.lambda_l1 > 0:
            total = ad.add(total, ad.mul(l1, cfg.lambda_l1))
        terms = []
        for chans in layer_channels:
            if not chans:
                continue
            per_x = ad.sum(ad.take_columns(learned, np.asarray(chans)), axis=1)
            terms.append(ad.sum(ad.hinge(per_x, float(cfg.n_mask))))
        if terms:
            sparse = terms[0]
            for t in terms[1:]:
                sparse = ad.add(sparse, t)
            sparse_val = float(sparse.data)
            if cfg.lambda_sparse > 0:
                total = ad.add(total, ad.mul(sparse, cfg.lambda_sparse))
    return LossTerms(total, float(mse.data), l1_val, sparse_val)


def model_forward(model, prep: Prepared):
    if isinstance(model, SirenNet):
        return model.forward(prep.coords), None, []
    res = model.forward(prep)
    chans = [model.learned_channels_of_layer(i) for i in range(1 + len(model.hidden))]
    return res.output, res.learned_masks, chans


def prepare(model, coords: np.ndarray) -> Prepared:
    if isinstance(model, SirenNet):
        return Prepared(coords)
    return model.prepare(coords)


def predict(model, coords: np.ndarray, chunk: int = 65536) -> np.ndarray:
    if isinstance(model, SirenNet):
        outs = []
        with ad.no_grad():
            for s in range(0, len(coords), chunk):
                outs.append(model.forward(coords[s:s + chunk]).data)
        return np.concatenate(outs, axis=0)
    return model.evaluate(coords, chunk)


def output_gradient(model, coords: np.ndarray) -> np.ndarray:
    """d output / d coords, (N, C, 2)."""
    if isinstance(model, SirenNet):
        as_sasnet = SasnetModel(model.first, model.hidden, model.head)
        return spatial_gradient(as_sasnet, coords)
    return spatial_gradient(model, coords)


# -- evaluation ------------------------------------------------------------------


class Evaluator:
    """Metric evaluation on the training lattice; ground-truth terms computed once."""

    def __init__(self, image: np.ndarray, cfg: TrainConfig):
        self.image = as_hwc(image)
        self.cfg = cfg
        h, w, _ = self.image.shape
        self.coords = pixel_coords(w, h, cfg.margin)
        self.gt_flat = self.image.reshape(-1, self.image.shape[2])
        gray = to_gray(self.image)
        self.partition = edge_partition(gray, CannyParams(cfg.canny_sigma, cfg.canny_low, cfg.canny_high,
                                                          cfg.dilation_radius))
        self.gt_grad = fd_gradient(gray)

    def reconstruct(self, model) -> np.ndarray:
        h, w, c = self.image.shape
        return predict(model, self.coords).reshape(h, w, c)

    def model_gradient_pixels(self, model) -> np.ndarray:
        """Gray-level model gradient in intensity per pixel, (H, W, 2)."""
        h, w, c = self.image.shape
        g = output_gradient(model, self.coords)
        g = g[:, 0, :] if c == 1 else np.einsum("c,ncd->nd", np.array([0.299, 0.587, 0.114]), g)
        g = g * np.array([2 * self.cfg.margin / w, 2 * self.cfg.margin / h])
        return g.reshape(h, w, 2)

    def report(self, model, step: int) -> MetricReport:
        h, w, c = self.image.shape
        with ad.no_grad():
            out, learned, chans = model_forward(model, prepare(model, self.coords))
            terms = loss(out, self.gt_flat, learned, chans, self.cfg)
        pred = np.clip(out.data.reshape(h, w, c), 0.0, 1.0)
        n_mean, n_std = noisiness(self.gt_grad, self.model_gradient_pixels(model), self.partition) \
            if self.partition.smooth.any() else (float("nan"), float("nan"))
        return MetricReport(step=step, mse=terms.mse, l1=terms.l1, sparse=terms.sparse,
                            psnr=psnr(self.image, pred), ssim=ssim(self.image, pred),
                            psnr_edge=psnr_edge(self.image, pred, self.partition),
                            noisiness_mean=n_mean, noisiness_std=n_std)


# -- training loop ------------------------------------------------------------------


@dataclass
class TrainResult:
    model: object
    optimizer: ad.Adam
    history: list[MetricReport]
    losses: np.ndarray  # (steps, 4): total, mse, l1, sparse
    step: int
    rngs: dict
    config: TrainConfig

    def checkpoint(self) -> "Checkpoint":
        return make_checkpoint(self.model, self.optimizer, self.config, self.step, self.rngs)


def load_training_image(cfg: TrainConfig) -> np.ndarray:
    from .imaging import load_png, toy_image

    if cfg.image == "toy":
        return toy_image(cfg.resolution)
    return load_png(cfg.image, size=cfg.resolution, gray=cfg.grayscale)


def train(cfg: TrainConfig, image: np.ndarray | None = None, resume: "Checkpoint | None" = None,
          callback: Callable | None = None, evaluate: bool = True) -> TrainResult:
    """Fit ``image`` (H, W, C) with the configured model.

    ``callback(step, model, terms)`` runs after each optimizer step.
    """
    cfg.validate()
    _kernels.tune_allocator()
    image = as_hwc(load_training_image(cfg) if image is None else image)
    h, w, c = image.shape
    rngs = rng_streams(cfg.seed)
    model = build_model(cfg, c, rngs)
    opt = make_optimizer(model, cfg)
    start = 0
    if resume is not None:
        start = restore(model, opt, rngs, resume)

    coords = pixel_coords(w, h, cfg.margin)
    gt = image.reshape(-1, c)
    full = prepare(model, coords)
    evaluator = Evaluator(image, cfg) if evaluate else None
    history: list[MetricReport] = []
    losses = []
    if evaluator is not None and start == 0:
        history.append(evaluator.report(model, 0))

    for step in range(start, cfg.steps):
        if cfg.batch and cfg.batch < len(coords):
            rows = np.sort(rngs["batch"].choice(len(coords), size=cfg.batch, replace=False))
            prep, target = full.subset(rows), gt[rows]
        else:
            prep, target = full, gt
        opt.zero_grad()
        out, learned, chans = model_forward(model, prep)
        terms = loss(out, target, learned, chans, cfg)
        if not np.isfinite(terms.total.data):
            raise NumericalFailure(step, "non-finite loss", make_checkpoint(model, opt, cfg, step, rngs))
        terms.total.backward()
        for name, p in opt.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericalFailure(step, f"non-finite gradient in {name}",
                                       make_checkpoint(model, opt, cfg, step, rngs))
        opt.step()
        losses.append((float(terms.total.data), terms.mse, terms.l1, terms.sparse))
        done = step + 1
        if callback is not None:
            callback(done, model, terms)
        if evaluator is not None and (done % cfg.eval_every == 0 or done == cfg.steps):
            rep = evaluator.report(model, done)
            history.append(rep)
            log.info("%s step %d psnr %.3f loss %.3e", cfg.name, done, rep.psnr, losses[-1][0])
    return TrainResult(model, opt, history, np.array(losses).reshape(-1, 4), max(start, cfg.steps), rngs, cfg)


# -- checkpoints ---------------------------------------------------------------------

MAGIC = b"SASN"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[str, np.ndarray]

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.header["config"])

    @property
    def step(self) -> int:
        return int(self.header["step"])


def make_checkpoint(model, opt: ad.Adam, cfg: TrainConfig, step: int, rngs: dict) -> Checkpoint:
    tensors: dict[str, np.ndarray] = {}
    if not isinstance(model, SirenNet):
        tensors.update(model.frozen_tensors())
    for name, p in opt.params.items():
        tensors[name] = p.data.copy()
    for name, st in opt.states.items():
        tensors[f"adam.m.{name}"] = st.first_moment.copy()
        tensors[f"adam.v.{name}"] = st.second_moment.copy()
    header = {
        "config": cfg.to_dict(),
        "step": int(step),
        "adam_steps": {name: st.step_count for name, st in opt.states.items()},
        "rng": {k: g.bit_generator.state for k, g in rngs.items()},
    }
    return Checkpoint(header, tensors)


def save_checkpoint(path, ckpt: Checkpoint):
    header = json.dumps(ckpt.header, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        code = 1 if np.issubdtype(arr.dtype, np.integer) else 0
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        raw = name.encode()
        chunks.append(struct.pack("<HBB", len(raw), code, data.ndim))
        chunks.append(raw)
        chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint (needed {n} bytes at offset {pos})")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a SASN checkpoint")
    version, hlen = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads version {FORMAT_VERSION}")
    header = json.loads(take(hlen))
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        nlen, code, ndim = struct.unpack("<HBB", take(4))
        name = take(nlen).decode()
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dt = _DTYPES[code]
        n = int(np.prod(dims)) if ndim else 1
        tensors[name] = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(dims).copy()
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return Checkpoint(header, tensors)


def restore(model, opt: ad.Adam, rngs: dict | None, ckpt: Checkpoint) -> int:
    """Copy checkpoint tensors into a freshly built model/optimizer; returns the step."""
    expected = set(opt.params)
    if not isinstance(model, SirenNet):
        expected |= set(model.frozen_tensors())
    expected |= {f"adam.{m}.{n}" for n in opt.params for m in ("m", "v")}
    got = set(ckpt.tensors)
    if got != expected:
        missing, unknown = sorted(expected - got), sorted(got - expected)
        raise CheckpointError(f"checkpoint does not match the model: missing {missing[:6]}, unknown {unknown[:6]}")
    for name, p in opt.params.items():
        arr = ckpt.tensors[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape}, model shape {p.shape}")
        p.data[...] = arr
        st = opt.states[name]
        st.first_moment[...] = ckpt.tensors[f"adam.m.{name}"]
        st.second_moment[...] = ckpt.tensors[f"adam.v.{name}"]
        st.step_count = int(ckpt.header["adam_steps"][name])
    if not isinstance(model, SirenNet) and model.uses_embedding:
        if not (np.array_equal(model.first.multipliers, ckpt.tensors["embed.k"])
                and np.array_equal(model.first.phases, ckpt.tensors["embed.phi"])):
            model.first.multipliers = ckpt.tensors["embed.k"].astype(np.int64)
            model.first.phases = ckpt.tensors["embed.phi"].copy()
    if rngs is not None:
        for k, state in ckpt.header.get("rng", {}).items():
            rngs[k].bit_generator.state = state
    return ckpt.step


def model_from_checkpoint(ckpt: Checkpoint, out_channels: int | None = None):
    cfg = ckpt.config
    if out_channels is None:
        out_channels = ckpt.tensors["head.W"].shape[0]
    model = build_model(cfg, out_channels)
    opt = make_optimizer(model, cfg)
    restore(model, opt, None, ckpt)
    return model, cfg


def write_metrics_csv(path, history: list[MetricReport]):
    import csv

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MetricReport.FIELDS)
        for rep in history:
            wr.writerow([repr(float(v)) if isinstance(v, float) else v for v in rep.row()])
