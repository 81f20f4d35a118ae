"""Hot inner loops: sine/cosine, hash-grid gather/scatter, Canny non-maximum suppression.

Each kernel has a numba ``@njit`` version and a pure-numpy version that
produce identical results. The numpy path is used when numba is missing
or when ``SASNET_DISABLE_NUMBA`` is set to a non-empty value other than
``0``.
"""

import ctypes
import os
import sys

import numpy as np

_flag = os.environ.get("SASNET_DISABLE_NUMBA", "")
USE_NUMBA = _flag in ("", "0")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is optional at runtime
        USE_NUMBA = False


_allocator_tuned = False


def tune_allocator():
    """Keep freed multi-megabyte buffers in the glibc heap instead of unmapping them.

    Training allocates the same large activation arrays every step; without
    this each one is a fresh mmap and pays page faults on first touch. Set
    ``SASNET_KEEP_MALLOC`` to skip. No-op off glibc.
    """
    global _allocator_tuned
    if _allocator_tuned or os.environ.get("SASNET_KEEP_MALLOC") or not sys.platform.startswith("linux"):
        return
    _allocator_tuned = True
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return
    libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD


# Cody-Waite split of pi/4 and minimax coefficients on [-pi/4, pi/4] (Cephes sin.c)
_SIN = (1.58962301576546568060e-10, -2.50507477628578072866e-8, 2.75573136213857245213e-6,
        -1.98412698295895385996e-4, 8.33333333332211858878e-3, -1.66666666666666307295e-1)
_COS = (-1.13585365213876817300e-11, 2.08757008419747316778e-9, -2.75573141792967388112e-7,
        2.48015872888517045348e-5, -1.38888888888730564116e-3, 4.16666666666665929218e-2)
_DP1, _DP2, _DP3 = 7.85398125648498535156e-1, 3.77489470793079817668e-8, 2.69515142907905952645e-15
_FOUR_OVER_PI = 1.27323954473516268615
# past this the three-term reduction loses bits; such entries go through libm
SINCOS_LIMIT = 1.0e8


# -- numpy reference path ----------------------------------------------------


def sincos_numpy(x):
    return np.sin(x), np.cos(x)


def gather_interp_numpy(table, idx, w):
    """out[n] = sum_c w[n, c] * table[idx[n, c]]  (table: T x F)."""
    return np.einsum("nc,ncf->nf", w, table[idx])


def mul_columns_numpy(h, m, col):
    """h * m[:, col]."""
    return h * m[:, col]


def mul_columns_grad_numpy(g, h, m, col):
    """Gradients of ``mul_columns`` w.r.t. h and m; repeated columns accumulate."""
    onehot = np.zeros((col.size, m.shape[1]))
    onehot[np.arange(col.size), col] = 1.0
    return g * m[:, col], (g * h) @ onehot


def scatter_interp_numpy(grad_out, idx, w, table_len):
    """Adjoint of ``gather_interp``: accumulate w * grad_out into table rows."""
    nfeat = grad_out.shape[1]
    flat_idx = idx.ravel()
    out = np.empty((table_len, nfeat))
    for f in range(nfeat):
        contrib = (w * grad_out[:, f:f + 1]).ravel()
        out[:, f] = np.bincount(flat_idx, weights=contrib, minlength=table_len)
    return out


def nms_numpy(mag, gx, gy):
    """Suppress pixels that are not maxima along the quantized gradient direction."""
    h, w = mag.shape
    out = np.zeros_like(mag)
    if h < 3 or w < 3:
        return out
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros(mag.shape, dtype=np.int64)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    c = mag[1:-1, 1:-1]
    # (dy, dx) neighbour offsets per sector; rows grow downward
    offsets = ((0, 1), (1, 1), (1, 0), (1, -1))
    keep = np.zeros(c.shape, dtype=bool)
    for s, (dy, dx) in enumerate(offsets):
        a = mag[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        b = mag[1 - dy:h - 1 - dy, 1 - dx:w - 1 - dx]
        keep |= (sector[1:-1, 1:-1] == s) & (c > a) & (c >= b)  # a tie keeps the pixel after the crossing
    out[1:-1, 1:-1] = np.where(keep, c, 0.0)
    return out


# -- numba path ---------------------------------------------------------------

if USE_NUMBA:

    @njit(cache=True)
    def _sincos_flat(x, s_out, c_out):
        s0, s1, s2, s3, s4, s5 = _SIN
        c0, c1, c2, c3, c4, c5 = _COS
        nbig = 0
        for i in range(x.size):
            v = x[i]
            a = abs(v)
            if not a < SINCOS_LIMIT:  # also catches nan; patched afterwards
                a = 0.0
                nbig += 1
            j = np.int64(a * _FOUR_OVER_PI)
            j += j & 1
            fj = np.float64(j)
            z = ((a - fj * _DP1) - fj * _DP2) - fj * _DP3
            zz = z * z
            ps = z + z * zz * (((((s0 * zz + s1) * zz + s2) * zz + s3) * zz + s4) * zz + s5)
            pc = 1.0 - 0.5 * zz + zz * zz * (((((c0 * zz + c1) * zz + c2) * zz + c3) * zz + c4) * zz + c5)
            q = j & 7  # even octant
            swap = (q & 2) != 0
            sv = pc if swap else ps
            cv = ps if swap else pc
            s_out[i] = -sv if ((q & 4) != 0) != (v < 0.0) else sv
            c_out[i] = -cv if (q == 2) | (q == 4) else cv
        return nbig

    def sincos_numba(x):
        """(sin x, cos x) in one vectorised pass; within 1 ulp of libm for |x| < 1e8."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        s = np.empty_like(x)
        c = np.empty_like(x)
        if _sincos_flat(x.reshape(-1), s.reshape(-1), c.reshape(-1)):
            big = ~(np.abs(x) < SINCOS_LIMIT)
            with np.errstate(invalid="ignore"):
                s[big], c[big] = np.sin(x[big]), np.cos(x[big])
        return s, c

    @njit(cache=True)
    def mul_columns_numba(h, m, col):
        n, k = h.shape
        out = np.empty((n, k))
        for i in range(n):
            for j in range(k):
                out[i, j] = h[i, j] * m[i, col[j]]
        return out

    @njit(cache=True)
    def mul_columns_grad_numba(g, h, m, col):
        n, k = h.shape
        gh = np.empty((n, k))
        gm = np.zeros(m.shape)
        for i in range(n):
            for j in range(k):
                c = col[j]
                gh[i, j] = g[i, j] * m[i, c]
                gm[i, c] += g[i, j] * h[i, j]
        return gh, gm

    @njit(cache=True)
    def gather_interp_numba(table, idx, w):
        n, ncorner = idx.shape
        nfeat = table.shape[1]
        out = np.zeros((n, nfeat))
        for i in range(n):
            for c in range(ncorner):
                row = idx[i, c]
                wc = w[i, c]
                for f in range(nfeat):
                    out[i, f] += wc * table[row, f]
        return out

    @njit(cache=True)
    def scatter_interp_numba(grad_out, idx, w, table_len):
        n, ncorner = idx.shape
        nfeat = grad_out.shape[1]
        out = np.zeros((table_len, nfeat))
        for i in range(n):
            for c in range(ncorner):
                row = idx[i, c]
                wc = w[i, c]
                for f in range(nfeat):
                    out[row, f] += wc * grad_out[i, f]
        return out

    @njit(cache=True)
    def nms_numba(mag, gx, gy):
        h, w = mag.shape
        out = np.zeros_like(mag)
        for y in range(1, h - 1):
            for x in range(1, w - 1):
                ang = np.rad2deg(np.arctan2(gy[y, x], gx[y, x])) % 180.0
                if 22.5 <= ang < 67.5:
                    dy, dx = 1, 1
                elif 67.5 <= ang < 112.5:
                    dy, dx = 1, 0
                elif 112.5 <= ang < 157.5:
                    dy, dx = 1, -1
                else:
                    dy, dx = 0, 1
                m = mag[y, x]
                if m > mag[y + dy, x + dx] and m >= mag[y - dy, x - dx]:
                    out[y, x] = m
        return out

    sincos = sincos_numba
    mul_columns = mul_columns_numba
    mul_columns_grad = mul_columns_grad_numba
    gather_interp = gather_interp_numba
    scatter_interp = scatter_interp_numba
    nms = nms_numba
else:
    sincos = sincos_numpy
    mul_columns = mul_columns_numpy
    mul_columns_grad = mul_columns_grad_numpy
    gather_interp = gather_interp_numpy
    scatter_interp = scatter_interp_numpy
    nms = nms_numpy
