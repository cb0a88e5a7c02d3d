"""External forces and initial data with closed-form integrals and moments.

A separable force is a sum of terms c * rho(x) * tau(t) with

* ``rho``  a spatial bump (radial Gaussian, possibly shifted off the origin,
           or an axial first-order Gaussian with zero mean),
* ``tau``  a compactly supported time profile (smooth quartic bump or an
           indicator window),
* ``c``    a constant amplitude vector.

Terms expose exact values of the space integral of rho, its first moment,
and the running time integral of tau, which drive the far-field profiles.
Assumption validation measures decay/integrability constants by lattice
quadrature over the support and reports them next to the target bound.

Initial data is either zero or a compactly supported divergence-free bump
built in curl form (perp-gradient of a Gaussian stream bump in d=2, curl of
a Gaussian vector potential in d=3), so its decay metadata is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import BoxGrid, VectorFieldGrid
from .kernels import heat_kernel

__all__ = [
    "GaussianBump",
    "AxialGaussian",
    "SmoothBump",
    "Indicator",
    "SeparableTerm",
    "ForceModel",
    "AssumptionReport",
    "InitialData",
    "validate_assumptions",
    "force_integral",
    "first_moment",
    "mean_zero_split",
    "build_initial_data",
]

# radius (in widths) at which a unit Gaussian drops below 1e-12
_GAUSS_CUT = math.sqrt(math.log(1e12))


@dataclass(frozen=True)
class GaussianBump:
    """rho(x) = exp(-|x - center|^2 / width^2)."""

    d: int
    width: float = 1.0
    center: tuple = None

    def __post_init__(self):
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ValueError(f"bump width must be positive and finite, got {self.width}")
        c = np.zeros(self.d) if self.center is None else np.asarray(self.center, dtype=float)
        if c.shape != (self.d,):
            raise ValueError(f"center must be a {self.d}-vector")
        object.__setattr__(self, "center", tuple(float(v) for v in c))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        z = x - np.asarray(self.center)
        return np.exp(-np.sum(z * z, axis=-1) / self.width**2)

    def integral(self) -> float:
        return (self.width * math.sqrt(math.pi)) ** self.d

    def first_moment(self) -> np.ndarray:
        return np.asarray(self.center) * self.integral()

    def support_radius(self) -> float:
        return float(np.linalg.norm(self.center)) + _GAUSS_CUT * self.width

    def heat_evolved(self, s: float):
        """Amplitude and width of exp(s*Laplacian) rho, still a shifted Gaussian."""
        w2 = self.width**2 + 4.0 * s
        amp = (self.width**2 / w2) ** (self.d / 2.0)
        return amp, math.sqrt(w2)

    @property
    def point_evaluable(self) -> bool:
        return True


@dataclass(frozen=True)
class AxialGaussian:
    """rho(x) = x_axis * exp(-|x|^2 / width^2); zero mean, nonzero first moment."""

    d: int
    axis: int = 0
    width: float = 1.0

    def __post_init__(self):
        if not (0 <= self.axis < self.d):
            raise ValueError(f"axis must be in [0, {self.d})")
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ValueError(f"bump width must be positive and finite, got {self.width}")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., self.axis] * np.exp(-np.sum(x * x, axis=-1) / self.width**2)

    def integral(self) -> float:
        return 0.0

    def first_moment(self) -> np.ndarray:
        m = np.zeros(self.d)
        m[self.axis] = 0.5 * self.width**2 * (self.width * math.sqrt(math.pi)) ** self.d
        return m

    def support_radius(self) -> float:
        return (_GAUSS_CUT + 1.0) * self.width

    @property
    def point_evaluable(self) -> bool:
        return False


@dataclass(frozen=True)
class SmoothBump:
    """Quartic bump on [t_on, t_off]: tau = 30 s^2 (1-s)^2 with s the local phase.

    Normalized so the full time integral equals t_off - t_on.
    """

    t_on: float = 0.0
    t_off: float = 1.0

    def __post_init__(self):
        if not (0 <= self.t_on < self.t_off):
            raise ValueError("need 0 <= t_on < t_off")

    def value(self, t):
        t = np.asarray(t, dtype=float)
        s = (t - self.t_on) / (self.t_off - self.t_on)
        inside = (s >= 0) & (s <= 1)
        s = np.clip(s, 0.0, 1.0)
        return np.where(inside, 30.0 * s**2 * (1.0 - s) ** 2, 0.0)

    def integral_to(self, t) -> float:
        span = self.t_off - self.t_on
        s = np.clip((np.asarray(t, dtype=float) - self.t_on) / span, 0.0, 1.0)
        anti = 10.0 * s**3 - 15.0 * s**4 + 6.0 * s**5
        return float(span * anti) if np.ndim(t) == 0 else span * anti

    @property
    def support_end(self) -> float:
        return self.t_off


@dataclass(frozen=True)
class Indicator:
    """tau = 1 on [t_on, t_off), 0 elsewhere."""

    t_on: float = 0.0
    t_off: float = 1.0

    def __post_init__(self):
        if not (0 <= self.t_on < self.t_off):
            raise ValueError("need 0 <= t_on < t_off")

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.t_on) & (t < self.t_off), 1.0, 0.0)

    def integral_to(self, t):
        t = np.asarray(t, dtype=float)
        out = np.clip(t, self.t_on, self.t_off) - self.t_on
        return float(out) if np.ndim(t) == 0 else out

    @property
    def support_end(self) -> float:
        return self.t_off


@dataclass(frozen=True)
class SeparableTerm:
    profile: object
    time_profile: object
    amplitude: tuple

    def __post_init__(self):
        amp = np.asarray(self.amplitude, dtype=float)
        if amp.shape != (self.profile.d,):
            raise ValueError("amplitude must be a d-vector")
        object.__setattr__(self, "amplitude", tuple(float(v) for v in amp))


class ForceModel:
    """External force: a sum of separable terms, or grid samples in time."""

    def __init__(self, d: int, terms: list | None = None,
                 samples: list | None = None, sample_times: np.ndarray | None = None):
        if d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {d!r}")
        self.d = d
        if (terms is None) == (samples is None):
            raise ValueError("provide exactly one of terms / samples")
        if terms is not None:
            for term in terms:
                if term.profile.d != d:
                    raise ValueError("term dimension mismatch")
            self.kind = "separable"
            self.terms = list(terms)
            self.samples = None
            self.sample_times = None
        else:
            times = np.asarray(sample_times, dtype=float)
            if len(samples) != times.size or np.any(np.diff(times) <= 0):
                raise ValueError("sampled force needs one grid per strictly increasing time")
            self.kind = "sampled"
            self.terms = None
            self.samples = list(samples)
            self.sample_times = times

    @classmethod
    def zero(cls, d: int) -> "ForceModel":
        return cls(d, terms=[])

    def value(self, x, t):
        """f(x, t) for points x of shape (..., d); returns (..., d)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "separable":
            out = np.zeros(x.shape)
            for term in self.terms:
                scalar = term.profile.value(x) * float(term.time_profile.value(t))
                out += scalar[..., None] * np.asarray(term.amplitude)
            return out
        return self._sampled_value(x, t)

    def _sampled_value(self, x, t):
        times = self.sample_times
        i = int(np.clip(np.searchsorted(times, t), 1, times.size - 1))
        t0, t1 = times[i - 1], times[i]
        lam = 0.0 if t1 == t0 else np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
        field_ = (1 - lam) * self.samples[i - 1].components + lam * self.samples[i].components
        grid = self.samples[0].grid
        idx = []
        for ax in range(self.d):
            j = np.rint((x[..., ax] + grid.length) / grid.spacing).astype(int) % grid.n
            idx.append(j)
        vals = field_[(slice(None),) + tuple(idx)]
        return np.moveaxis(vals, 0, -1)

    def support_radius(self) -> float:
        if self.kind == "separable":
            if not self.terms:
                return 0.0
            return max(t.profile.support_radius() for t in self.terms)
        return self.samples[0].grid.length

    def support_end(self) -> float:
        if self.kind == "separable":
            if not self.terms:
                return 0.0
            return max(t.time_profile.support_end for t in self.terms)
        return float(self.sample_times[-1])

    @property
    def point_evaluable(self) -> bool:
        return self.kind == "separable" and all(t.profile.point_evaluable for t in self.terms)


def force_integral(f: ForceModel, t: float) -> np.ndarray:
    """Running space-time integral of the force up to time t (a d-vector).

    Exact for separable terms; trapezoidal in time for sampled forces.
    Zero at t = 0 and constant once every time profile has switched off.
    """
    if t < 0:
        raise ValueError("time must be >= 0")
    if f.kind == "separable":
        out = np.zeros(f.d)
        for term in f.terms:
            out += np.asarray(term.amplitude) * term.profile.integral() * term.time_profile.integral_to(t)
        return out
    return _sampled_time_integral(f, t, moment=False)


def first_moment(f: ForceModel, t: float) -> np.ndarray:
    """Running first space moment: the d x d matrix with entries
    integral of y_h f_k(y, s) over space and s in [0, t]."""
    if t < 0:
        raise ValueError("time must be >= 0")
    if f.kind == "separable":
        out = np.zeros((f.d, f.d))
        for term in f.terms:
            out += np.outer(term.profile.first_moment(), term.amplitude) * term.time_profile.integral_to(t)
        return out
    return _sampled_time_integral(f, t, moment=True)


def _sampled_time_integral(f: ForceModel, t: float, moment: bool):
    grid = f.samples[0].grid
    h = grid.spacing**grid.d
    pts = grid.points.reshape(-1, f.d)
    slices = []
    for snap in f.samples:
        if moment:
            comps = snap.components.reshape(f.d, -1)
            slices.append(h * np.einsum("yh,ky->hk", pts, comps))
        else:
            slices.append(h * snap.components.sum(axis=tuple(range(1, f.d + 1))))
    slices = np.array(slices)
    times = f.sample_times
    upto = np.searchsorted(times, t, side="right")
    if upto < 2:
        return np.zeros_like(slices[0])
    tt = np.minimum(times[:upto], t)
    return np.trapezoid(slices[:upto], x=tt, axis=0)


@dataclass
class AssumptionReport:
    """Measured constants for the standing force assumptions.

    * epsilon_f1: sup |f| / min((1+|x|)^(-d-2), (1+t)^(-(d+2)/2))
    * l1_norm:    space-time L1 norm of |f|
    * c_f3:       sup over t of (1+t)^(1/2) * L1 norm of |x| f(., t)
    * target:     the bound the f1/f2 constants are compared against

    Vector amplitudes enter through the Euclidean norm of f(x, t).
    """

    epsilon_f1: float
    l1_norm: float
    c_f3: float
    target: float
    pass_f1: bool = field(init=False)
    pass_f2: bool = field(init=False)
    pass_f3: bool = field(init=False)

    def __post_init__(self):
        if min(self.epsilon_f1, self.l1_norm, self.c_f3) < 0:
            raise ValueError("measured constants must be nonnegative")
        self.pass_f1 = self.epsilon_f1 <= self.target
        self.pass_f2 = self.l1_norm <= self.target
        self.pass_f3 = math.isfinite(self.c_f3)

    @property
    def all_pass(self) -> bool:
        return self.pass_f1 and self.pass_f2 and self.pass_f3

    def combined(self) -> float:
        return self.epsilon_f1 + self.l1_norm


def _measurement_lattice(f: ForceModel, points_per_axis: int):
    r = max(f.support_radius(), 1.0)
    n = points_per_axis if f.d == 2 else max(48, points_per_axis // 3)
    ax = np.linspace(-r, r, n, endpoint=False) + r / n
    mesh = np.meshgrid(*([ax] * f.d), indexing="ij")
    pts = np.stack(mesh, axis=-1)
    return pts, (2.0 * r / n) ** f.d


def validate_assumptions(f: ForceModel, epsilon: float,
                          points_per_axis: int = 192, time_samples: int = 257) -> AssumptionReport:
    """Measure the force-assumption constants by quadrature over the support.

    Passing means the measured f1/f2 constants are at most ``epsilon`` and the
    f3 constant is finite.
    """
    if f.kind == "separable" and not f.terms:
        return AssumptionReport(0.0, 0.0, 0.0, target=epsilon)
    if f.kind == "sampled" and f.samples[0].grid.length < f.support_radius():
        raise ValueError("sampled force grid does not cover the declared support")

    pts, cell = _measurement_lattice(f, points_per_axis)
    radii = np.linalg.norm(pts, axis=-1)
    t_end = max(f.support_end(), 1e-6)
    # midpoint rule in time: robust to indicator-profile jumps at the window ends
    dt = t_end / time_samples
    times = (np.arange(time_samples) + 0.5) * dt

    space_weight = (1.0 + radii) ** (f.d + 2)
    eps_f1 = 0.0
    l1 = 0.0
    f3 = 0.0
    for t in times:
        mag = np.linalg.norm(f.value(pts, float(t)), axis=-1)
        # 1 / min((1+|x|)^{-d-2}, (1+t)^{-(d+2)/2}) = max of the two blow-ups
        ratio = mag * np.maximum(space_weight, (1.0 + t) ** ((f.d + 2) / 2.0))
        eps_f1 = max(eps_f1, float(ratio.max(initial=0.0)))
        l1 += float(mag.sum()) * cell * dt
        f3 = max(f3, (1.0 + t) ** 0.5 * float((radii * mag).sum()) * cell)
    return AssumptionReport(eps_f1, l1, f3, target=epsilon)


def mean_zero_split(f: ForceModel, t: float):
    """Split the force slice at time t as f(., t) = weight * g + phi with g the
    unit-time heat kernel and phi of zero space integral.

    Returns (weight, phi) with phi a vectorized callable on points.
    """
    if t < 0:
        raise ValueError("time must be >= 0")
    if f.kind == "separable":
        weight = np.zeros(f.d)
        for term in f.terms:
            weight += np.asarray(term.amplitude) * term.profile.integral() * float(
                term.time_profile.value(t)
            )
    else:
        grid = f.samples[0].grid
        weight = f.value(grid.points, t).sum(axis=tuple(range(f.d))) * grid.spacing**f.d

    def phi(x):
        x = np.asarray(x, dtype=float)
        g = heat_kernel(x, 1.0, f.d)
        return f.value(x, t) - g[..., None] * weight

    return weight, phi


class InitialData:
    """Initial velocity: zero, or a compactly supported divergence-free bump.

    The curl-form bump is amplitude * perp-grad of exp(-|x|^2/w^2) in d=2 and
    amplitude * curl(psi e_3) in d=3; both are divergence-free with zero mean
    and Gaussian decay, and their heat evolution stays in closed form.
    """

    def __init__(self, d: int, kind: str = "zero", amplitude: float = 0.0,
                 width: float = 1.0, center=None):
        if d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {d!r}")
        if kind not in ("zero", "curl_bump"):
            raise ValueError(f"unknown initial data kind {kind!r}")
        if kind == "curl_bump":
            if not (width > 0 and math.isfinite(width)):
                raise ValueError("curl bump width must be positive and finite")
            if not math.isfinite(amplitude):
                raise ValueError("curl bump amplitude must be finite")
        self.d = d
        self.kind = kind
        self.amplitude = float(amplitude)
        self.width = float(width)
        c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        self.center = c
        if kind == "zero" or amplitude == 0.0:
            self.l1_norm = 0.0
            self.sup_weighted = 0.0
        else:
            self.l1_norm = self._exact_l1()
            self.sup_weighted = self._measure_sup_weighted()

    def _exact_l1(self) -> float:
        a, w = abs(self.amplitude), self.width
        if self.d == 2:
            return a * math.pi**1.5 * w
        return a * math.pi**2 * w**2

    def _measure_sup_weighted(self) -> float:
        # sup over r of (1 + |x - 0|)^d |a(x)|; the bump is radial in |x-center|
        r = np.linspace(0.0, self.width * _GAUSS_CUT + np.linalg.norm(self.center), 20001)
        rho = np.clip(r - np.linalg.norm(self.center), 0.0, None)
        mag = 2.0 * abs(self.amplitude) * rho / self.width**2 * np.exp(-(rho / self.width) ** 2)
        return float(((1.0 + r) ** self.d * mag).max())

    def value(self, x, t: float = 0.0):
        """The datum (t = 0) or its heat evolution at time t >= 0, in closed form."""
        x = np.asarray(x, dtype=float)
        if self.kind == "zero" or self.amplitude == 0.0:
            return np.zeros(x.shape)
        if t < 0:
            raise ValueError("time must be >= 0")
        w2 = self.width**2 + 4.0 * t
        amp = self.amplitude * (self.width**2 / w2) ** (self.d / 2.0)
        z = x - self.center
        g = np.exp(-np.sum(z * z, axis=-1) / w2)
        out = np.zeros(x.shape)
        # perp-gradient / curl of the stream bump
        out[..., 0] = 2.0 * z[..., 1] / w2 * g * amp
        out[..., 1] = -2.0 * z[..., 0] / w2 * g * amp
        return out

    def to_field(self, grid: BoxGrid) -> VectorFieldGrid:
        return VectorFieldGrid.from_callable(grid, lambda x: self.value(x, 0.0))

    def support_radius(self) -> float:
        if self.kind == "zero" or self.amplitude == 0.0:
            return 0.0
        return float(np.linalg.norm(self.center)) + (_GAUSS_CUT + 1.0) * self.width


def build_initial_data(d: int, kind: str = "zero", amplitude: float = 0.0,
                       width: float = 1.0, center=None) -> InitialData:
    """Construct initial data from a bump description (or zero)."""
    return InitialData(d, kind=kind, amplitude=amplitude, width=width, center=center)
