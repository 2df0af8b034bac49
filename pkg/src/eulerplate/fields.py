"""Discrete fields on the periodic channel T^2 x [0, 1].

Volume fields are real arrays of shape ``(..., n1, n2, n3)`` and surface
fields real arrays of shape ``(..., n1, n2)``. The physical samples are the
source of truth; spectral coefficients are computed on demand with real
FFTs over the two horizontal axes. The vertical direction uses collocation
on Chebyshev-Gauss-Lobatto nodes mapped to [0, 1] (ascending, including
both walls).
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
import scipy.fft as sfft

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"AEPF"
SNAPSHOT_VERSION = 1


def cheb_nodes(n: int) -> np.ndarray:
    """Gauss-Lobatto nodes on [0, 1] in ascending order."""
    j = np.arange(n)
    return 0.5 * (1.0 - np.cos(np.pi * j / (n - 1)))


def cheb_diff_matrix(n: int) -> np.ndarray:
    """First-derivative collocation matrix on the nodes of :func:`cheb_nodes`.

    Off-diagonal differences use the product-of-sines identity and the
    diagonal is set by the negative row sum, which keeps the rounding of
    low-order polynomials near machine precision.
    """
    N = n - 1
    j = np.arange(n)
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c = c * (-1.0) ** j
    # xi_i - xi_j for xi = cos(pi j / N), written without cancellation
    diff = 2.0 * np.sin(np.pi * (j[:, None] + j[None, :]) / (2 * N)) * np.sin(
        np.pi * (j[None, :] - j[:, None]) / (2 * N)
    )
    np.fill_diagonal(diff, 1.0)
    D = np.outer(c, 1.0 / c) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    # d/dx3 = -2 d/dxi for x3 = (1 - xi) / 2
    return -2.0 * D


def clenshaw_curtis_weights(n: int) -> np.ndarray:
    """Quadrature weights on [0, 1] for the Gauss-Lobatto nodes."""
    N = n - 1
    theta = np.pi * np.arange(n) / N
    w = np.zeros(n)
    v = np.ones(N - 1)
    inner = np.arange(1, N)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k * k - 1)
        v -= np.cos(N * theta[inner]) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[inner]) / (4 * k * k - 1)
    w[inner] = 2.0 * v / N
    return 0.5 * w


class Grid:
    """Tensor grid: Fourier in x1, x2 (period 1) and collocation in x3.

    Args:
        n1: Number of points in x1 (even, at least 8).
        n2: Number of points in x2 (even, at least 8).
        n3: Number of vertical collocation nodes (at least 9).
    """

    def __init__(self, n1: int, n2: int, n3: int):
        for name, n in (("n1", n1), ("n2", n2)):
            if n < 8 or n % 2:
                raise ValueError(f"{name} must be even and >= 8, got {n}")
        if n3 < 9:
            raise ValueError(f"n3 must be >= 9, got {n3}")
        self.n1, self.n2, self.n3 = int(n1), int(n2), int(n3)
        self.shape = (self.n1, self.n2, self.n3)
        self.shape2 = (self.n1, self.n2)

        self.x1 = np.arange(n1) / n1
        self.x2 = np.arange(n2) / n2
        self.x3 = cheb_nodes(n3)
        self.D3 = cheb_diff_matrix(n3)
        self.D3T = np.ascontiguousarray(self.D3.T)
        self.D33 = self.D3 @ self.D3
        self.weights = clenshaw_curtis_weights(n3)

        k1 = sfft.fftfreq(n1, 1.0 / n1)
        k2 = sfft.rfftfreq(n2, 1.0 / n2)
        self.k1 = k1
        self.k2 = k2
        kx = 2 * np.pi * k1[:, None] * np.ones((1, k2.size))
        ky = 2 * np.pi * k2[None, :] * np.ones((n1, 1))
        self.kx, self.ky = kx, ky
        self.ksq = kx**2 + ky**2
        self.kabs = np.sqrt(self.ksq)
        # odd derivatives drop the Nyquist modes so real fields stay real
        self.ikx = 1j * np.where(np.abs(k1[:, None]) == n1 // 2, 0.0, kx)
        self.iky = 1j * np.where(np.abs(k2[None, :]) == n2 // 2, 0.0, ky)
        self.cut1 = (2 * (n1 // 2)) // 3
        self.cut2 = (2 * (n2 // 2)) // 3
        self.mask = (np.abs(k1[:, None]) <= self.cut1) & (np.abs(k2[None, :]) <= self.cut2)
        # multiplicity of each rfft coefficient in Parseval sums
        mult = np.full(k2.size, 2.0)
        mult[0] = 1.0
        if n2 % 2 == 0:
            mult[-1] = 1.0
        self.mult = np.broadcast_to(mult[None, :], self.ksq.shape)

        self._ikx3 = self.ikx[:, :, None]
        self._iky3 = self.iky[:, :, None]
        self._mask3 = self.mask[:, :, None]
        # per-grid operator caches filled by the solver modules
        self.cache: dict = {}

    def __repr__(self) -> str:
        return f"Grid(n1={self.n1}, n2={self.n2}, n3={self.n3})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and self.shape == other.shape

    def __hash__(self) -> int:
        return hash(self.shape)

    # coordinates -------------------------------------------------------

    def mesh(self):
        """Return broadcastable coordinate arrays (X1, X2, X3) of the volume grid."""
        X1 = self.x1[:, None, None]
        X2 = self.x2[None, :, None]
        X3 = self.x3[None, None, :]
        return (
            np.broadcast_to(X1, self.shape),
            np.broadcast_to(X2, self.shape),
            np.broadcast_to(X3, self.shape),
        )

    def mesh2(self):
        """Return coordinate arrays (X1, X2) of the horizontal grid."""
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def zeros(self, *lead) -> np.ndarray:
        return np.zeros(tuple(lead) + self.shape)

    def zeros2(self, *lead) -> np.ndarray:
        return np.zeros(tuple(lead) + self.shape2)

    # transforms --------------------------------------------------------

    def fft3(self, f: np.ndarray) -> np.ndarray:
        """Horizontal spectral coefficients of a volume field (unnormalized)."""
        return sfft.rfft2(f, axes=(-3, -2))

    def ifft3(self, fh: np.ndarray) -> np.ndarray:
        return sfft.irfft2(fh, s=self.shape2, axes=(-3, -2))

    def fft2(self, f: np.ndarray) -> np.ndarray:
        """Spectral coefficients of a surface field (unnormalized)."""
        return sfft.rfft2(f, axes=(-2, -1))

    def ifft2(self, fh: np.ndarray) -> np.ndarray:
        return sfft.irfft2(fh, s=self.shape2, axes=(-2, -1))

    # differential operators -------------------------------------------

    def diff(self, f: np.ndarray, axis: int, dealias: bool = False) -> np.ndarray:
        """Partial derivative along axis 1, 2 (spectral) or 3 (collocation)."""
        if axis == 3:
            return f @ self.D3T
        fh = self.fft3(f)
        fh *= self._ikx3 if axis == 1 else self._iky3
        if dealias:
            fh *= self._mask3
        return self.ifft3(fh)

    def grad(self, f: np.ndarray, dealias: bool = False) -> np.ndarray:
        """Stack (d1 f, d2 f, d3 f) along a new axis -4; leading axes are batched."""
        fh = self.fft3(f)
        if dealias:
            fh *= self._mask3
            out = self.ifft3(np.stack([fh * self._ikx3, fh * self._iky3, fh], axis=-4))
            out[..., 2, :, :, :] = out[..., 2, :, :, :] @ self.D3T
            return out
        d12 = self.ifft3(np.stack([fh * self._ikx3, fh * self._iky3], axis=-4))
        return np.concatenate([d12, (f @ self.D3T)[..., None, :, :, :]], axis=-4)

    def dealias(self, f: np.ndarray) -> np.ndarray:
        """Zero horizontal modes outside the 2/3-rule cutoff (volume field)."""
        return self.ifft3(self.fft3(f) * self._mask3)

    def dealias2(self, f: np.ndarray) -> np.ndarray:
        return self.ifft2(self.fft2(f) * self.mask)

    def diff2(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Horizontal derivative of a surface field."""
        fh = self.fft2(f)
        fh *= self.ikx if axis == 1 else self.iky
        return self.ifft2(fh)

    def lap2(self, f: np.ndarray) -> np.ndarray:
        """Horizontal Laplacian of a surface field."""
        return self.ifft2(-self.ksq * self.fft2(f))

    def bilap2(self, f: np.ndarray) -> np.ndarray:
        return self.ifft2(self.ksq**2 * self.fft2(f))

    def lap3(self, f: np.ndarray) -> np.ndarray:
        """Full Laplacian of a volume field."""
        fh = self.fft3(f)
        return self.ifft3(-self.ksq[:, :, None] * fh) + f @ self.D33.T

    # traces, means, integrals -----------------------------------------

    @staticmethod
    def trace(f: np.ndarray, boundary: int) -> np.ndarray:
        """Restriction to x3 = 0 (boundary 0) or x3 = 1 (boundary 1)."""
        if boundary not in (0, 1):
            raise ValueError("boundary must be 0 (bottom) or 1 (plate)")
        return f[..., 0] if boundary == 0 else f[..., -1]

    @staticmethod
    def mean_gamma1(f: np.ndarray) -> float:
        """Area average of a surface field (the zeroth Fourier coefficient)."""
        return np.mean(f, axis=(-2, -1))

    def integrate_omega(self, f: np.ndarray):
        """Volume integral: horizontal mean times vertical quadrature."""
        return np.mean(f, axis=(-3, -2)) @ self.weights

    def inner2(self, f: np.ndarray, g: np.ndarray) -> float:
        """L2 inner product on a horizontal plane."""
        return float(np.mean(f * g))

    def l2_2d(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.mean(f * f)))

    def l2_3d(self, f: np.ndarray) -> float:
        return float(np.sqrt(max(self.integrate_omega(f * f), 0.0)))

    # Sobolev-type norms ------------------------------------------------

    def _lambda_sq_sum(self, fh: np.ndarray, s: float) -> np.ndarray:
        """Sum over modes of (1+|2 pi k|^2)^s |c_k|^2 with normalized c_k."""
        scale = 1.0 / (self.n1 * self.n2)
        weight = self.mult * (1.0 + self.ksq) ** s
        power = np.abs(fh * scale) ** 2
        if fh.ndim == 3:
            # one value per vertical level
            return np.einsum("ij,ijk->k", weight, power)
        return np.sum(weight * power)

    def sobolev_norm_2d(self, f: np.ndarray, s: float) -> float:
        """Norm of Lambda^s f in L2 of the torus, Lambda^s = (1 - Laplacian)^(s/2)."""
        return float(np.sqrt(self._lambda_sq_sum(self.fft2(f), s)))

    def sobolev_norm_3d(self, f: np.ndarray, s: float) -> float:
        """Anisotropic diagnostic norm of a volume field.

        ``N_s(f)^2 = sum_{m=0}^{floor(s)} int_0^1 ||Lambda^{s-m} d3^m f(., x3)||^2 dx3``.
        It is monotone in s and reduces to the L2 norm at s = 0; it is not an
        exact fractional norm on the channel.
        """
        total = 0.0
        g = f
        for m in range(int(np.floor(s)) + 1):
            if m > 0:
                g = g @ self.D3T
            per_level = self._lambda_sq_sum(self.fft3(g), s - m)
            total += float(per_level @ self.weights)
        return float(np.sqrt(max(total, 0.0)))


# snapshot IO -------------------------------------------------------------


def write_snapshot(path, grid: Grid, fields: dict) -> None:
    """Write named fields in the little-endian AEPF binary layout.

    Surface fields (shape ``(n1, n2)``) are stored replicated along x3 so that
    every record has ``n1*n2*n3`` samples.
    """
    arrays = []
    for name, values in fields.items():
        values = np.asarray(values, dtype=np.float64)
        if values.shape == grid.shape2:
            values = np.repeat(values[:, :, None], grid.n3, axis=2)
        if values.shape != grid.shape:
            raise ValueError(f"field {name!r} has shape {values.shape}, grid is {grid.shape}")
        arrays.append((name, values))
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<5I", SNAPSHOT_VERSION, grid.n1, grid.n2, grid.n3, len(arrays)))
        for name, _ in arrays:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        for _, values in arrays:
            fh.write(np.ascontiguousarray(values).astype("<f8").tobytes())


def read_snapshot(path):
    """Read an AEPF snapshot. Returns ``(grid, {name: array})``."""
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not an AEPF snapshot")
    version, n1, n2, n3, count = struct.unpack_from("<5I", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    offset = 24
    names = []
    for _ in range(count):
        (length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        names.append(data[offset : offset + length].decode("utf-8"))
        offset += length
    grid = Grid(n1, n2, n3)
    size = n1 * n2 * n3
    fields = {}
    for name in names:
        values = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        fields[name] = values.reshape(grid.shape).astype(np.float64)
        offset += 8 * size
    return grid, fields


def export_text(path, grid: Grid, values: np.ndarray) -> None:
    """Write one ``x1 x2 x3 value`` row per node."""
    X1, X2, X3 = grid.mesh()
    table = np.column_stack([X1.ravel(), X2.ravel(), X3.ravel(), np.asarray(values).ravel()])
    np.savetxt(path, table, fmt="%.17g")
