"""Periodic-box sampled vector fields with paired physical/spectral forms.

The box is [-L, L)^d sampled at N points per axis (x_i = -L + i*h, h = 2L/N),
so wavenumbers are pi*n/L for integer n in the usual FFT layout.  Spectral
data uses the raw numpy FFT convention (no normalization on the forward
transform); all operators below are pure Fourier multipliers, so the
convention never leaks out.

The box is a truncation device for problems posed on all of R^d: scenarios
must keep the essential support of data and force well inside the box and
time horizons short enough (sqrt(T) <= L/8 is enforced upstream) that
periodic-image contamination stays below reporting tolerances.
"""

from __future__ import annotations

import math
import struct
from functools import cached_property

import numpy as np

__all__ = [
    "BoxGrid",
    "VectorFieldGrid",
    "leray_project",
    "heat_evolve",
    "weighted_lp_norm",
    "restrict_annulus_norm",
    "read_snapshot",
]

_MAGIC = b"NSVF"
_VERSION = 1


class BoxGrid:
    """Uniform periodic grid on [-L, L)^d with N points per axis."""

    def __init__(self, d: int, length: float, n: int):
        if d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {d!r}")
        if length <= 0:
            raise ValueError("box half-width must be positive")
        if n < 16 or n % 2 != 0:
            raise ValueError("points per axis must be even and >= 16")
        if n & (n - 1) != 0:
            raise ValueError("points per axis must be a power of two")
        self.d = d
        self.length = float(length)
        self.n = int(n)

    @property
    def spacing(self) -> float:
        return 2.0 * self.length / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    def __eq__(self, other):
        return (
            isinstance(other, BoxGrid)
            and (self.d, self.length, self.n) == (other.d, other.length, other.n)
        )

    def __hash__(self):
        return hash((self.d, self.length, self.n))

    def __repr__(self):
        return f"BoxGrid(d={self.d}, length={self.length}, n={self.n})"

    @cached_property
    def axis(self) -> np.ndarray:
        """Physical coordinates along one axis."""
        return -self.length + np.arange(self.n) * self.spacing

    @cached_property
    def points(self) -> np.ndarray:
        """All grid points, shape (N, ..., N, d)."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.points**2, axis=-1))

    @cached_property
    def wavenumbers(self) -> list:
        """Broadcastable wavenumber arrays, one per axis."""
        k = 2.0 * math.pi * np.fft.fftfreq(self.n, d=self.spacing)
        out = []
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = self.n
            out.append(k.reshape(shape))
        return out

    @cached_property
    def k_squared(self) -> np.ndarray:
        k2 = np.zeros(self.shape)
        for k in self.wavenumbers:
            k2 = k2 + k * k
        return k2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule mask: keep |n_axis| < N/3 on every axis."""
        keep = np.ones(self.shape, dtype=bool)
        idx = np.fft.fftfreq(self.n) * self.n
        cut = self.n / 3.0
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = self.n
            keep &= (np.abs(idx) < cut).reshape(shape)
        return keep


class VectorFieldGrid:
    """A d-component field sampled on a BoxGrid, with a cached transform.

    Treat instances as immutable: operations return new fields.
    """

    def __init__(self, grid: BoxGrid, components: np.ndarray, time: float = 0.0,
                 spectral: np.ndarray | None = None):
        components = np.asarray(components, dtype=float)
        if components.shape != (grid.d,) + grid.shape:
            raise ValueError(
                f"components must have shape {(grid.d,) + grid.shape}, got {components.shape}"
            )
        self.grid = grid
        self.components = components
        self.time = float(time)
        self._spectral = spectral

    @classmethod
    def zero(cls, grid: BoxGrid, time: float = 0.0) -> "VectorFieldGrid":
        return cls(grid, np.zeros((grid.d,) + grid.shape), time=time)

    @classmethod
    def from_spectral(cls, grid: BoxGrid, spectral: np.ndarray, time: float = 0.0):
        axes = tuple(range(1, grid.d + 1))
        components = np.real(np.fft.ifftn(spectral, axes=axes))
        return cls(grid, components, time=time, spectral=np.array(spectral))

    @classmethod
    def from_callable(cls, grid: BoxGrid, func, time: float = 0.0):
        """Sample a vectorized callable x -> (..., d) of physical points."""
        values = np.asarray(func(grid.points), dtype=float)
        components = np.moveaxis(values, -1, 0)
        return cls(grid, components, time=time)

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            axes = tuple(range(1, self.grid.d + 1))
            self._spectral = np.fft.fftn(self.components, axes=axes)
        return self._spectral

    def mean(self) -> np.ndarray:
        """Mean of each component over the box (the zero Fourier mode)."""
        axes = tuple(range(1, self.grid.d + 1))
        return self.components.mean(axis=axes)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components**2, axis=0))

    def divergence_defect(self) -> float:
        """max_k |k . u_hat(k)| / max_k |u_hat(k)|, zero mode excluded."""
        spec = self.spectral
        dot = np.zeros(self.grid.shape, dtype=complex)
        for ax, k in enumerate(self.grid.wavenumbers):
            dot += k * spec[ax]
        denom = np.abs(spec).max()
        if denom == 0.0:
            return 0.0
        return float(np.abs(dot).max() / denom)

    def is_divergence_free(self, tol: float = 1e-10) -> bool:
        return self.divergence_defect() < tol

    def save(self, path) -> None:
        """Write the snapshot in the flat binary format (see README):
        magic 'NSVF', version u8, endian tag '<', then little-endian
        u32 d, u32 N, f64 L, f64 time, u32 ncomp, raw f64 samples (C order)."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("B", _VERSION))
            fh.write(b"<")
            fh.write(struct.pack("<IIddI", self.grid.d, self.grid.n,
                                 self.grid.length, self.time, self.components.shape[0]))
            fh.write(np.ascontiguousarray(self.components, dtype="<f8").tobytes())


def read_snapshot(path) -> VectorFieldGrid:
    """Read a snapshot written by VectorFieldGrid.save."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a field snapshot: bad magic {magic!r}")
        (version,) = struct.unpack("B", fh.read(1))
        if version != _VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        endian = fh.read(1)
        if endian not in (b"<", b">"):
            raise ValueError(f"bad endianness tag {endian!r}")
        tag = endian.decode()
        d, n = struct.unpack(f"{tag}II", fh.read(8))
        length, time = struct.unpack(f"{tag}dd", fh.read(16))
        (ncomp,) = struct.unpack(f"{tag}I", fh.read(4))
        count = ncomp * n**d
        data = np.frombuffer(fh.read(count * 8), dtype=f"{tag}f8", count=count)
    grid = BoxGrid(d, length, n)
    components = data.reshape((ncomp,) + grid.shape).astype(float)
    return VectorFieldGrid(grid, components, time=time)


def _projector_apply(grid: BoxGrid, spec: np.ndarray) -> np.ndarray:
    """Apply the divergence-free spectral multiplier; zero mode passes through."""
    k2 = grid.k_squared
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    dot = np.zeros(grid.shape, dtype=complex)
    for ax, k in enumerate(grid.wavenumbers):
        dot += k * spec[ax]
    dot *= inv_k2
    out = np.empty_like(spec)
    for ax, k in enumerate(grid.wavenumbers):
        out[ax] = spec[ax] - k * dot
    return out


def leray_project(v: VectorFieldGrid) -> VectorFieldGrid:
    """Project onto divergence-free fields: multiplier I - k k^T / |k|^2 modewise.

    The k = 0 mode passes through unchanged.  Idempotent and self-adjoint for
    the discrete inner product.
    """
    spec = _projector_apply(v.grid, v.spectral)
    return VectorFieldGrid.from_spectral(v.grid, spec, time=v.time)


def heat_evolve(v: VectorFieldGrid, t: float) -> VectorFieldGrid:
    """Evolve by the heat semigroup: multiplier exp(-t |k|^2); t = 0 is identity."""
    if t < 0:
        raise ValueError(f"heat evolution time must be >= 0, got {t!r}")
    if t == 0.0:
        return VectorFieldGrid(v.grid, v.components.copy(), time=v.time,
                               spectral=None if v._spectral is None else v._spectral.copy())
    spec = v.spectral * np.exp(-t * v.grid.k_squared)
    return VectorFieldGrid.from_spectral(v.grid, spec, time=v.time)


def _weight(grid: BoxGrid, alpha: float) -> np.ndarray:
    if alpha == 0.0:
        return np.ones(grid.shape)
    return (1.0 + grid.radius) ** alpha


def weighted_lp_norm(v: VectorFieldGrid, alpha: float, p: float) -> float:
    """|| (1+|x|)^alpha u ||_p over the box by midpoint quadrature.

    p = inf returns the sample maximum of (1+|x|)^alpha |u(x)|.
    """
    if alpha < 0:
        raise ValueError("weight exponent must be >= 0")
    if not (p >= 1):
        raise ValueError("p must satisfy 1 <= p <= inf")
    mag = v.magnitude()
    w = _weight(v.grid, alpha)
    if math.isinf(p):
        return float(np.max(w * mag))
    h = v.grid.spacing
    return float(np.sum((w * mag) ** p) * h**v.grid.d) ** (1.0 / p)


def restrict_annulus_norm(v: VectorFieldGrid, r_in: float, r_out: float,
                          alpha: float, p: float) -> float:
    """Same quadrature as weighted_lp_norm restricted to r_in <= |x| < r_out."""
    if not (0 <= r_in < r_out <= v.grid.length):
        raise ValueError(
            f"annulus bounds must satisfy 0 <= r_in < r_out <= L, got [{r_in}, {r_out})"
        )
    if alpha < 0:
        raise ValueError("weight exponent must be >= 0")
    if not (p >= 1):
        raise ValueError("p must satisfy 1 <= p <= inf")
    r = v.grid.radius
    mask = (r >= r_in) & (r < r_out)
    mag = v.magnitude()
    w = _weight(v.grid, alpha)
    vals = (w * mag)[mask]
    if vals.size == 0:
        return 0.0
    if math.isinf(p):
        return float(vals.max())
    h = v.grid.spacing
    return float(np.sum(vals**p) * h**v.grid.d) ** (1.0 / p)
