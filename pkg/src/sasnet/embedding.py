"""Frozen frequency embedding layer, Bessel expansion of sine neurons, spectra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import sincos


# -- integer multipliers -------------------------------------------------------


def canonicalize(k: np.ndarray) -> np.ndarray:
    """Map each row k to the representative of {k, -k} with k_x > 0, or k_x = 0 and k_y >= 0."""
    k = np.array(k, dtype=np.int64, copy=True)
    flip = (k[:, 0] < 0) | ((k[:, 0] == 0) & (k[:, 1] < 0))
    k[flip] *= -1
    return k


def high_band_points(low: int, limit: int) -> np.ndarray:
    """All canonical multipliers with low < max(|k|) <= limit, sorted lexicographically."""
    r = np.arange(-limit, limit + 1)
    kx, ky = np.meshgrid(r, r, indexing="ij")
    pts = np.stack([kx.ravel(), ky.ravel()], axis=1)
    m = np.abs(pts).max(axis=1)
    pts = pts[(m > low) & (m <= limit)]
    return np.unique(canonicalize(pts), axis=0)


def band_width(low: int, limit: int, n_band: int) -> int:
    return -(-(limit - low) // n_band)


def assign_groups(k: np.ndarray, low: int, limit: int, n_band: int) -> np.ndarray:
    """Group 0 for max|k| <= low, then bands (lo, hi] of even width above it."""
    m = np.abs(k).max(axis=1)
    bw = band_width(low, limit, n_band)
    groups = np.zeros(len(k), dtype=np.int64)
    high = m > low
    groups[high] = 1 + (m[high] - low - 1) // bw
    return groups


def sample_multipliers(width: int, low: int, limit: int, low_fraction: float,
                       rng: np.random.Generator, n_band: int = 5):
    """Sample ``width`` integer frequency multipliers split into low and high bands.

    Low rows are drawn uniformly (with replacement) from [-low, low]^2; high
    rows are drawn without replacement from the canonical points of
    [-limit, limit]^2 minus the low square. Rows are returned sorted by group.

    Returns ``(k, groups)``.
    """
    if not 0 < low < limit:
        raise ValueError(f"need 0 < low < limit, got low={low}, limit={limit}")
    if n_band < 1:
        raise ValueError("n_band must be >= 1")
    n_low = int(math.floor(width * low_fraction))
    n_high = width - n_low
    candidates = high_band_points(low, limit)
    if n_high > len(candidates):
        raise ValueError(
            f"requested {n_high} high-band multipliers but only {len(candidates)} distinct canonical points exist"
        )
    k_low = canonicalize(rng.integers(-low, low + 1, size=(n_low, 2)))
    k_high = candidates[np.sort(rng.choice(len(candidates), size=n_high, replace=False))]
    k = np.concatenate([k_low, k_high]).astype(np.int64)
    groups = assign_groups(k, low, limit, n_band)
    order = np.argsort(groups, kind="stable")
    return k[order], groups[order]


@dataclass
class FrequencyEmbedding:
    multipliers: np.ndarray  # (width, 2) int64
    phases: np.ndarray  # (width,)
    base_freq: float = math.pi
    band_low: int = 12
    band_limit: int = 60
    n_band: int = 5
    group_of: np.ndarray = field(default=None)
    trainable: bool = False

    def __post_init__(self):
        self.multipliers = np.asarray(self.multipliers, dtype=np.int64)
        self.phases = np.asarray(self.phases, dtype=np.float64)
        if self.group_of is None:
            self.group_of = assign_groups(self.multipliers, self.band_low, self.band_limit, self.n_band)

    @property
    def width(self) -> int:
        return len(self.multipliers)

    @property
    def n_groups(self) -> int:
        return 1 + self.n_band

    @property
    def weight(self) -> np.ndarray:
        return self.base_freq * self.multipliers.astype(np.float64)

    def preactivation(self, coords: np.ndarray) -> np.ndarray:
        return coords @ self.weight.T + self.phases

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        return sincos(self.preactivation(coords))[0]

    def jacobian(self, coords: np.ndarray) -> np.ndarray:
        """d activation / d coords, shape (N, width, 2)."""
        c = sincos(self.preactivation(coords))[1]
        return c[:, :, None] * self.weight[None, :, :]


def build_embedding(multipliers: np.ndarray, rng: np.random.Generator, base_freq: float = math.pi,
                    band_low: int = 12, band_limit: int = 60, n_band: int = 5,
                    groups: np.ndarray | None = None) -> FrequencyEmbedding:
    """Freeze multipliers into a sine layer sin(base_freq * <k, x> + phi), phi ~ U(-pi, pi)."""
    phases = rng.uniform(-math.pi, math.pi, size=len(multipliers))
    return FrequencyEmbedding(multipliers, phases, base_freq, band_low, band_limit, n_band, groups)


# -- Bessel functions of the first kind -------------------------------------------


def bessel_j_series(n: int, x: float) -> float:
    """J_n(x) from the ascending power series; accurate for moderate |x|."""
    sign = 1.0
    if n < 0:
        n = -n
        sign = -1.0 if n % 2 else 1.0
    half = 0.5 * x
    term = 1.0
    for i in range(1, n + 1):
        term *= half / i
    terms = [term]
    q = -half * half
    m = 0
    while True:
        term *= q / ((m + 1) * (m + n + 1))
        m += 1
        terms.append(term)
        if m > abs(half) and abs(term) < 1e-300 + 1e-18 * abs(terms[0]):
            break
        if m > 500:
            break
    return sign * math.fsum(terms)


def bessel_j_orders(x: float, nmax: int) -> np.ndarray:
    """J_0(x) .. J_nmax(x) by Miller's backward recurrence.

    Normalized with J_0 + 2 * sum_k J_2k = 1. Stable for every order because
    the backward recurrence follows the minimal solution.
    """
    out = np.zeros(nmax + 1)
    if x == 0.0:
        out[0] = 1.0
        return out
    ax = abs(x)
    if ax < 1e-3:
        # the recurrence ratio 2k/x overflows here; the series needs only a few terms
        return np.array([bessel_j_series(n, x) for n in range(nmax + 1)])
    top =max(nmax, int(ax)) + 20 + int(math.sqrt(40.0 * max(nmax, ax, 1.0)))
    top += top % 2
    j_next, j_cur = 0.0, 1e-30
    vals = np.zeros(top + 1)
    vals[top] = j_cur
    for k in range(top, 0, -1):
        j_prev = (2.0 * k / ax) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        vals[k - 1] = j_cur
        if abs(j_cur) > 1e250:
            vals[k - 1:] *= 1e-250
            j_next *= 1e-250
            j_cur *= 1e-250
    norm = vals[0] + 2.0 * vals[2::2].sum()
    vals /= norm
    out[:] = vals[:nmax + 1]
    if x < 0:
        out[1::2] *= -1.0
    return out


def bessel_j(orders: np.ndarray, x: float) -> np.ndarray:
    """J_k(x) for integer orders of either sign."""
    orders = np.asarray(orders, dtype=np.int64)
    table = bessel_j_orders(x, int(np.abs(orders).max(initial=0)))
    vals = table[np.abs(orders)]
    odd_neg = (orders < 0) & (orders % 2 == 1)
    return np.where(odd_neg, -vals, vals)


@dataclass(frozen=True)
class ExpansionTerm:
    k: tuple
    amplitude: float


@dataclass
class NeuronExpansion:
    """Truncated harmonic expansion of sin(sum_l w_l sin(y_l) + b)."""

    multipliers: np.ndarray  # (T, m) int
    amplitudes: np.ndarray  # (T,)
    bias: float

    def __len__(self):
        return len(self.amplitudes)

    def __iter__(self):
        for k, a in zip(self.multipliers, self.amplitudes):
            yield ExpansionTerm(tuple(int(v) for v in k), float(a))

    def evaluate(self, y: np.ndarray, min_amplitude: float = 0.0, chunk: int = 4096) -> np.ndarray:
        """Sum the terms at points ``y`` (P x m).

        Terms with |amplitude| < ``min_amplitude`` are skipped; their total
        contribution is bounded by ``skipped_mass(min_amplitude)``.
        """
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        keep = np.abs(self.amplitudes) >= min_amplitude
        ks = self.multipliers[keep].astype(np.float64)
        amps = self.amplitudes[keep]
        out = np.zeros(len(y))
        for s in range(0, len(amps), chunk):
            out += sincos(y @ ks[s:s + chunk].T + self.bias)[0] @ amps[s:s + chunk]
        return out

    def skipped_mass(self, min_amplitude: float) -> float:
        a = np.abs(self.amplitudes)
        return float(a[a < min_amplitude].sum())


def neuron_expansion(w, b: float, K: int) -> NeuronExpansion:
    """Enumerate all terms with ||k||_inf <= K; amplitude prod_l J_{k_l}(w_l)."""
    if K < 1:
        raise ValueError("truncation K must be >= 1")
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    orders = np.arange(-K, K + 1)
    per_dim = [bessel_j(orders, float(wl)) for wl in w]
    grids = np.meshgrid(*([orders] * len(w)), indexing="ij")
    ks = np.stack([g.ravel() for g in grids], axis=1)
    amp = np.ones(len(ks))
    for l, vals in enumerate(per_dim):
        amp = amp * vals[ks[:, l] + K]
    return NeuronExpansion(ks, amp, float(b))


# -- spectra -------------------------------------------------------------------


def periodic_lattice(resolution: int) -> np.ndarray:
    """Row-major (y outer, x inner) samples x_i = -1 + 2 i / R covering one period."""
    t = -1.0 + 2.0 * np.arange(resolution) / resolution
    yy, xx = np.meshgrid(t, t, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


@dataclass
class Spectrum:
    power: np.ndarray  # (R, R), fftshifted; axis 0 = ky, axis 1 = kx
    harmonics: np.ndarray  # (R,) integer harmonic index per shifted bin

    def band_fraction(self, limit: int) -> float:
        """Share of non-DC energy with max(|kx|, |ky|) <= limit."""
        ky, kx = np.meshgrid(self.harmonics, self.harmonics, indexing="ij")
        nondc = (kx != 0) | (ky != 0)
        inside = nondc & (np.maximum(np.abs(kx), np.abs(ky)) <= limit)
        total = self.power[nondc].sum()
        if total == 0:
            return 1.0
        return float(self.power[inside].sum() / total)

    def dc_fraction(self) -> float:
        c = len(self.harmonics) // 2
        total = self.power.sum()
        return float(self.power[c, c] / total) if total > 0 else 1.0

    def rows(self):
        """(kx, ky, power) triples."""
        ky, kx = np.meshgrid(self.harmonics, self.harmonics, indexing="ij")
        return np.stack([kx.ravel(), ky.ravel(), self.power.ravel()], axis=1)


def spectrum(fn, resolution: int) -> Spectrum:
    """Channel-averaged 2D power spectrum of ``fn`` sampled over one period of [-1, 1]^2.

    ``fn`` maps (N, 2) coordinates to (N,) or (N, C) values. On this lattice the
    integer harmonic k of the base frequency pi falls exactly on FFT bin k.
    """
    if resolution < 2 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two, got {resolution}")
    vals = np.asarray(fn(periodic_lattice(resolution)), dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    img = vals.reshape(resolution, resolution, -1)
    f = np.fft.fft2(img, axes=(0, 1)) / (resolution * resolution)
    power = np.fft.fftshift((np.abs(f) ** 2).mean(axis=2))
    harmonics = np.fft.fftshift(np.fft.fftfreq(resolution, d=1.0 / resolution)).astype(np.int64)
    return Spectrum(power, harmonics)
