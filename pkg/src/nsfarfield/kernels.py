"""Free-space convolution kernels of the heat-Stokes semigroup.

Everything here is exact (closed form) and dimension-generic for d in {2, 3}:

* ``heat_kernel``        -- the Gaussian g_t(x) = (4*pi*t)^(-d/2) exp(-|x|^2/(4t)).
* ``oseen_kernel``       -- K(x,t), the matrix kernel of heat flow composed with
                            the Leray projection onto divergence-free fields.
* ``oseen_grad_kernel``  -- F(x,t) with F[j,k,l] = d/dx_l K[j,k], the kernel that
                            contracts against u (x) u in the bilinear Duhamel term.
* ``leading_tensor``     -- the Hessian of the fundamental solution of the
                            Laplacian, homogeneous of degree -d; the t-independent
                            far-field limit of K.
* ``psi_residual``       -- the Gaussian-decaying self-similar correction Psi with
                            K(x,t) = leading_tensor(x) + |x|^(-d) Psi(x/sqrt(t)).

The radial structure used throughout: for a radial density q(r) = A exp(-r^2/a^2)
with cumulative mass M(r), the divergence-free projection of the constant-vector
field c*q is

    P(c q)(x) = (q(r) - H(r)) c + (d H(r) - q(r)) (xh.c) xh,

where xh = x/r and H(r) = M(r) / (sigma_{d-1} r^d) is the mean density inside
radius r divided by d.  The Oseen kernel is the special case q = g_t (columns
c = e_k).  Both H and d*H - q have removable singularities at r = 0, handled by
series expansion below ``_SERIES_CUT``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

__all__ = [
    "SPHERE_AREA",
    "heat_kernel",
    "oseen_kernel",
    "oseen_grad_kernel",
    "oseen_grad_contract",
    "leading_tensor",
    "grad_leading_tensor",
    "psi_residual",
    "profile_field",
    "next_order_profile",
    "sphere_min",
    "sphere_points",
    "projected_gaussian",
    "oseen_frobenius_radial",
    "oseen_l1_gradient_norm",
    "envelope_constant",
    "grad_envelope_constant",
]

# Surface area of the unit sphere S^{d-1}; index by dimension d.
SPHERE_AREA = {2: 2.0 * math.pi, 3: 4.0 * math.pi}

# Switch to series evaluation of the radial profiles when u = (r/a)^2 < 1e-3.
# The direct erf/expm1 forms lose ~|log10 u| digits to cancellation in
# d*H - q as u -> 0; at the cut both branches agree to ~1e-12 relative.
_SERIES_CUT = 1.0e-3
_SERIES_TERMS = 10


def _check_dim(d: int) -> int:
    if d not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {d!r}")
    return d


def _check_time(t: float) -> float:
    t = float(t)
    if not t > 0.0:
        raise ValueError(f"time must be > 0, got {t!r}")
    return t


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ValueError(f"points must have last axis of size {d}, got shape {x.shape}")
    return x


def heat_kernel(x, t: float, d: int):
    """Gaussian heat kernel (4*pi*t)^(-d/2) exp(-|x|^2 / (4t)).

    ``x`` may be a single point or an array of points with last axis d.
    Raises ValueError for t <= 0.
    """
    d = _check_dim(d)
    t = _check_time(t)
    x = _as_points(x, d)
    r2 = np.sum(x * x, axis=-1)
    return (4.0 * math.pi * t) ** (-d / 2.0) * np.exp(-r2 / (4.0 * t))


def _mass_fraction_over_u(u: np.ndarray, d: int) -> np.ndarray:
    """H(r)/A for the unit-amplitude Gaussian exp(-r^2/a^2), as a function of u=(r/a)^2.

    H(r) = M(r)/(sigma_{d-1} r^d) where M is the mass inside radius r.
    Smooth at u = 0 with value 1/d; series branch below _SERIES_CUT.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = u < _SERIES_CUT
    if np.any(small):
        us = u[small]
        acc = np.zeros_like(us)
        for m in range(_SERIES_TERMS - 1, -1, -1):
            if d == 2:
                b_m = 0.5 / math.factorial(m + 1)
            else:
                b_m = 1.0 / (math.factorial(m) * (2 * m + 3))
            acc = acc * (-us) + b_m
        out[small] = acc
    big = ~small
    if np.any(big):
        ub = u[big]
        if d == 2:
            out[big] = -np.expm1(-ub) / (2.0 * ub)
        else:
            su = np.sqrt(ub)
            out[big] = (
                (math.sqrt(math.pi) / 4.0) * erf(su) / (ub * su)
                - 0.5 * np.exp(-ub) / ub
            )
    return out


def _defect_over_u(u: np.ndarray, d: int) -> np.ndarray:
    """(d*H(r) - q(r))/A as a function of u = (r/a)^2; vanishes linearly at u=0."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = u < _SERIES_CUT
    if np.any(small):
        us = u[small]
        acc = np.zeros_like(us)
        for m in range(_SERIES_TERMS, 0, -1):
            if d == 2:
                a_m = m / math.factorial(m + 1)
            else:
                a_m = 2.0 * m / (math.factorial(m) * (2 * m + 3))
            acc = acc * (-us) + a_m
        out[small] = us * acc
    big = ~small
    if np.any(big):
        ub = u[big]
        out[big] = d * _mass_fraction_over_u(ub, d) - np.exp(-ub)
    return out


def projected_gaussian(x, amplitude: float, width: float, c, d: int):
    """Divergence-free projection of the vector field c * A exp(-|x|^2/w^2).

    Returns the field value at ``x`` (shape (..., d)).  This is the closed-form
    action of the Leray projector on a radial Gaussian times a constant vector;
    the Oseen kernel columns are the special case A = (4 pi t)^(-d/2), w = 2 sqrt(t).
    """
    d = _check_dim(d)
    x = _as_points(x, d)
    c = np.asarray(c, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    u = r2 / (width * width)
    q = amplitude * np.exp(-u)
    h = amplitude * _mass_fraction_over_u(u, d)
    defect = amplitude * _defect_over_u(u, d)  # d*H - q
    # value = (q - H) c + defect * (xh.c) xh ; xh.c xh = (x.c) x / r^2
    xc = np.einsum("...j,j->...", x, c)
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = np.where(r2 > 0.0, xc / r2, 0.0)
    return (q - h)[..., None] * c + (defect * radial)[..., None] * x


def oseen_kernel(x, t: float, d: int):
    """Matrix kernel K(x,t) of the heat semigroup composed with the Leray projector.

    K[j,k](x,t) = (g - H) delta_jk + (d H - g) xh_j xh_k with g the heat kernel
    and H the mean of g inside radius |x| divided by d.  Shape (..., d, d).
    Symmetric, trace (d-1) g_t(x), and K(x,t) = t^(-d/2) K(x/sqrt(t), 1).
    """
    d = _check_dim(d)
    t = _check_time(t)
    x = _as_points(x, d)
    amplitude = (4.0 * math.pi * t) ** (-d / 2.0)
    width = 2.0 * math.sqrt(t)
    r2 = np.sum(x * x, axis=-1)
    u = r2 / (width * width)
    q = amplitude * np.exp(-u)
    h = amplitude * _mass_fraction_over_u(u, d)
    defect = amplitude * _defect_over_u(u, d)
    eye = np.eye(d)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_r2 = np.where(r2 > 0.0, 1.0 / r2, 0.0)
    xx = x[..., :, None] * x[..., None, :]
    return (q - h)[..., None, None] * eye + (defect * inv_r2)[..., None, None] * xx


def _grad_pw(x, t: float, d: int):
    """Radial coefficients P = g/(2t) and W = (g - d*H)/r^2 for the K gradient."""
    amplitude = (4.0 * math.pi * t) ** (-d / 2.0)
    width2 = 4.0 * t
    r2 = np.sum(x * x, axis=-1)
    u = r2 / width2
    q = amplitude * np.exp(-u)
    p = q / (2.0 * t)
    # W = -(d*H - q)/r^2 = -A * defect(u) / (u * w^2); series-safe via defect/u.
    defect = _defect_over_u(u, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(u >= _SERIES_CUT, defect / np.where(u > 0, u, 1.0), 0.0)
    small = u < _SERIES_CUT
    if np.any(small):
        us = u[small]
        acc = np.zeros_like(us)
        for m in range(_SERIES_TERMS, 0, -1):
            if d == 2:
                a_m = m / math.factorial(m + 1)
            else:
                a_m = 2.0 * m / (math.factorial(m) * (2 * m + 3))
            acc = acc * (-us) + a_m
        ratio[small] = acc
    w = -amplitude * ratio / width2
    return p, w


def oseen_grad_kernel(x, t: float, d: int):
    """Gradient kernel F(x,t), F[j,k,l] = d/dx_l K[j,k](x,t).  Shape (..., d, d, d).

    Contracting F[j,k,l] with the (k,l) entries of u (x) u yields component j of
    the projected divergence of the momentum flux.  Satisfies
    F(x,t) = t^(-(d+1)/2) F(x/sqrt(t), 1) and sum_j F[j,k,j] = 0.
    """
    d = _check_dim(d)
    t = _check_time(t)
    x = _as_points(x, d)
    p, w = _grad_pw(x, t, d)
    r2 = np.sum(x * x, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_r2 = np.where(r2 > 0.0, 1.0 / r2, 0.0)
    eye = np.eye(d)
    out = np.zeros(x.shape[:-1] + (d, d, d))
    # -(P+W) delta_jk x_l
    out -= (p + w)[..., None, None, None] * eye[:, :, None] * x[..., None, None, :]
    # -W (delta_jl x_k + delta_kl x_j)
    out -= w[..., None, None, None] * (
        eye[:, None, :] * x[..., None, :, None]
        + eye[None, :, :] * x[..., :, None, None]
    )
    # +(P + (d+2) W) x_j x_k x_l / r^2
    cubic = (
        x[..., :, None, None] * x[..., None, :, None] * x[..., None, None, :]
    )
    out += ((p + (d + 2.0) * w) * inv_r2)[..., None, None, None] * cubic
    return out


def oseen_grad_contract(z, t: float, d: int, s):
    """Contract the gradient kernel with a symmetric matrix field:
    out_j = sum_{k,l} F[j,k,l](z, t) s[k,l], without materializing F.

    ``z`` has shape (..., d) and ``s`` (..., d, d) (matching leading axes or
    broadcastable).  Using the radial coefficients P, W of the gradient kernel,

        out = -(P + 2W) (s z) - W tr(s) z + (P + (d+2) W) (z.s z) z / r^2.
    """
    d = _check_dim(d)
    t = _check_time(t)
    z = _as_points(z, d)
    s = np.asarray(s, dtype=float)
    p, w = _grad_pw(z, t, d)
    r2 = np.sum(z * z, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_r2 = np.where(r2 > 0.0, 1.0 / np.where(r2 > 0, r2, 1.0), 0.0)
    sz = np.einsum("...kl,...l->...k", s, z)
    zsz = np.einsum("...k,...k->...", z, sz)
    tr = np.trace(s, axis1=-2, axis2=-1)
    out = -(p + 2.0 * w)[..., None] * sz
    out -= (w * tr)[..., None] * z
    out += ((p + (d + 2.0) * w) * zsz * inv_r2)[..., None] * z
    return out


def leading_tensor(x, d: int):
    """Hessian of the fundamental solution of the Laplacian, degree -d homogeneous.

    Entry (j,k) equals (-delta_jk |x|^2 + d x_j x_k) / (sigma_{d-1} |x|^{d+2}).
    Symmetric with exactly zero trace.  Raises ValueError at x = 0.
    """
    d = _check_dim(d)
    x = _as_points(x, d)
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 == 0.0):
        raise ValueError("leading tensor is singular at x = 0")
    coeff = 1.0 / (SPHERE_AREA[d] * r2 ** (d / 2.0 + 1.0))
    eye = np.eye(d)
    xx = x[..., :, None] * x[..., None, :]
    out = coeff[..., None, None] * (d * xx - r2[..., None, None] * eye)
    # close the diagonal so the trace is exactly zero in floating point
    idx = np.arange(d)
    diag = out[..., idx, idx]
    out[..., d - 1, d - 1] = -np.sum(diag[..., : d - 1], axis=-1)
    return out


def grad_leading_tensor(x, d: int):
    """Analytic gradient G[j,k,h] = d/dx_h of leading_tensor[j,k]; degree -(d+1)."""
    d = _check_dim(d)
    x = _as_points(x, d)
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 == 0.0):
        raise ValueError("gradient of the leading tensor is singular at x = 0")
    coeff = d / (SPHERE_AREA[d] * r2 ** (d / 2.0 + 1.0))
    eye = np.eye(d)
    out = np.zeros(x.shape[:-1] + (d, d, d))
    out += eye[:, :, None] * x[..., None, None, :]
    out += eye[:, None, :] * x[..., None, :, None]
    out += eye[None, :, :] * x[..., :, None, None]
    cubic = x[..., :, None, None] * x[..., None, :, None] * x[..., None, None, :]
    out -= (d + 2.0) * cubic / r2[..., None, None, None]
    return coeff[..., None, None, None] * out


def psi_residual(xi, d: int):
    """Self-similar residual Psi(xi) = |xi|^d (K(xi, 1) - leading_tensor(xi)).

    For every t > 0, K(x,t) - leading_tensor(x) = |x|^(-d) Psi(x / sqrt(t)).
    Decays like exp(-|xi|^2/4) up to polynomial factors.
    """
    d = _check_dim(d)
    xi = _as_points(xi, d)
    r2 = np.sum(xi * xi, axis=-1)
    if np.any(r2 == 0.0):
        raise ValueError("psi residual is singular at xi = 0")
    diff = oseen_kernel(xi, 1.0, d) - leading_tensor(xi, d)
    return (r2 ** (d / 2.0))[..., None, None] * diff


def profile_field(x, c, d: int):
    """Homogeneous far-field profile m(x) = leading_tensor(x) @ c; degree -d."""
    m = leading_tensor(x, d)
    c = np.asarray(c, dtype=float)
    return np.einsum("...jk,k->...j", m, c)


def next_order_profile(x, m1, d: int):
    """Dipole-order profile with j-component sum_{h,k} d_h(leading_tensor)[j,k] m1[h,k].

    ``m1`` is a d x d matrix (in applications, the first space moment of the
    force integrated in time).  Homogeneous of degree -(d+1).
    """
    g = grad_leading_tensor(x, d)  # (..., j, k, h)
    m1 = np.asarray(m1, dtype=float)
    if m1.shape != (d, d):
        raise ValueError(f"moment matrix must be {d}x{d}, got shape {m1.shape}")
    return np.einsum("...jkh,hk->...j", g, m1)


def sphere_points(d: int, n: int | None = None) -> np.ndarray:
    """Quasi-uniform sample of the unit sphere: equispaced angles (d=2) or a
    Fibonacci lattice (d=3).  Defaults: 4096 angles / 8192 lattice points."""
    d = _check_dim(d)
    if d == 2:
        n = 4096 if n is None else int(n)
        theta = 2.0 * math.pi * np.arange(n) / n
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    n = 8192 if n is None else int(n)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = 2.0 * math.pi * i / golden
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def sphere_min(c, d: int, n: int | None = None) -> float:
    """Minimum over the sampled unit sphere of |leading_tensor(w) @ c|.

    Strictly positive iff c != 0 (up to sampling resolution); the profile
    m(w) = leading_tensor(w) c has no zero on the sphere unless c vanishes.
    """
    c = np.asarray(c, dtype=float)
    if not np.any(c):
        return 0.0
    omega = sphere_points(d, n)
    values = profile_field(omega, c, d)
    return float(np.min(np.linalg.norm(values, axis=-1)))


def oseen_frobenius_radial(r, t: float, d: int):
    """Frobenius norm of K(x,t) as a function of r = |x| (K is isotropic in law:
    eigenvalue (d-1)H along x, eigenvalue g-H with multiplicity d-1 across)."""
    d = _check_dim(d)
    t = _check_time(t)
    r = np.asarray(r, dtype=float)
    amplitude = (4.0 * math.pi * t) ** (-d / 2.0)
    u = r * r / (4.0 * t)
    q = amplitude * np.exp(-u)
    h = amplitude * _mass_fraction_over_u(u, d)
    return np.sqrt(((d - 1.0) * h) ** 2 + (d - 1.0) * (q - h) ** 2)


def _grad_frobenius_radial(r, t: float, d: int):
    """Frobenius norm of F(x,t) at |x| = r (isotropic; evaluated on the 1-axis)."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    x = np.zeros((r.size, d))
    x[:, 0] = r
    f = oseen_grad_kernel(x, t, d)
    return np.sqrt(np.sum(f * f, axis=(-3, -2, -1)))


def oseen_l1_gradient_norm(t: float, d: int, panels: int = 240) -> float:
    """L1 norm over space of the Frobenius norm of F(.,t); equals const/sqrt(t).

    Computed by log-graded Gauss-Legendre radial quadrature of
    sigma_{d-1} r^{d-1} |F(r,t)|_F between r = 1e-6 sqrt(t) and 40 sqrt(t).
    """
    d = _check_dim(d)
    t = _check_time(t)
    nodes, weights = np.polynomial.legendre.leggauss(8)
    edges = np.sqrt(t) * np.logspace(-6, math.log10(40.0), panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        r = mid + half * nodes
        vals = SPHERE_AREA[d] * r ** (d - 1) * _grad_frobenius_radial(r, t, d)
        total += half * float(np.dot(weights, vals))
    return total


def _log_sample_pairs(d: int, n_x: int = 10, n_t: int = 10, rng=None):
    """Log-spaced (x, t) sample used for envelope-constant measurements."""
    radii = np.logspace(-2, 2, n_x)
    times = np.logspace(-2, 2, n_t)
    if rng is None:
        rng = np.random.default_rng(20260808)
    dirs = rng.normal(size=(n_x, d))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return radii, times, dirs


def envelope_constant(d: int, n_x: int = 10, n_t: int = 10) -> float:
    """Measured constant C with |K(x,t)|_F <= C min(|x|^-d, t^-d/2) on a log grid."""
    radii, times, dirs = _log_sample_pairs(d, n_x, n_t)
    best = 0.0
    for t in times:
        x = radii[:, None] * dirs
        vals = np.sqrt(np.sum(oseen_kernel(x, float(t), d) ** 2, axis=(-2, -1)))
        bound = np.minimum(radii ** (-float(d)), float(t) ** (-d / 2.0))
        best = max(best, float(np.max(vals / bound)))
    return best


def grad_envelope_constant(d: int, n_x: int = 10, n_t: int = 10) -> float:
    """Measured constant C with |F(x,t)|_F <= C min(|x|^-(d+1), t^-(d+1)/2)."""
    radii, times, dirs = _log_sample_pairs(d, n_x, n_t)
    best = 0.0
    for t in times:
        x = radii[:, None] * dirs
        f = oseen_grad_kernel(x, float(t), d)
        vals = np.sqrt(np.sum(f * f, axis=(-3, -2, -1)))
        bound = np.minimum(radii ** (-(d + 1.0)), float(t) ** (-(d + 1) / 2.0))
        best = max(best, float(np.max(vals / bound)))
    return best


