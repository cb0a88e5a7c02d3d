"""Mild-solution construction on the periodic box and far-field evaluation.

The velocity solves the integral formulation

    u(t) = heat(t) a  -  B(u, u)(t)  +  L(f)(t),

where B is the bilinear Duhamel term (projected divergence of the momentum
flux propagated by the heat flow) and L(f) the linear force response.  The
solver iterates the whole time horizon at once:

    u^(0)    = heat a + L(f)
    u^(k+1)  = heat a - B(u^(k), u^(k)) + L(f)

with every Duhamel integral evaluated by per-slice Gauss-Legendre panels,
geometrically graded toward the singular end s = t, and accumulated by the
exponential-integrator recursion

    I(t_m) = exp(-dt |k|^2) I(t_{m-1}) + (panel over [t_{m-1}, t_m]).

The box zero mode cannot represent decay at infinity, so it is split off
analytically: snapshots are stored mean-free and the uniform drift
force_integral(t) / (2L)^d is tracked separately and re-injected into the
momentum flux, which keeps the grid solution box-exact while the snapshots
approximate the free-space solution.

Far-field evaluation assembles the same three Duhamel terms at arbitrary
points from the closed-form kernels, with per-term error estimates.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .forcing import ForceModel, InitialData, force_integral, validate_assumptions
from .grid import BoxGrid, VectorFieldGrid, read_snapshot

__all__ = [
    "SolverOptions",
    "Trajectory",
    "FarFieldSample",
    "SolverError",
    "AdmissionError",
    "ContractionError",
    "ConvergenceError",
    "picard_solve",
    "linear_response",
    "bilinear_term",
    "farfield_eval",
    "farfield_velocity",
    "integral_residual",
    "load_trajectory",
]

_GL4 = np.polynomial.legendre.leggauss(4)
_GL2 = np.polynomial.legendre.leggauss(2)

# admission guard: measured force + data constants must stay below this
ADMISSION_LIMIT = 5e-2


class SolverError(RuntimeError):
    pass


class AdmissionError(SolverError):
    """Force/data constants too large for the contraction regime."""


class ContractionError(SolverError):
    def __init__(self, message, log):
        super().__init__(message)
        self.iteration_log = log


class ConvergenceError(SolverError):
    def __init__(self, message, log):
        super().__init__(message)
        self.iteration_log = log


@dataclass(frozen=True)
class SolverOptions:
    slices: int = 64          # time slices over the whole horizon
    tol: float = 1e-10
    max_sweeps: int = 12
    refine: int = 1           # split every quadrature panel this many times
    grading_levels: int = 6   # geometric grading toward the singular end
    enforce_admission: bool = True


def _graded_panels(a: float, b: float, levels: int, refine: int):
    """Panels covering [a, b], geometrically graded toward b, each split `refine` times."""
    width = b - a
    edges = [a] + [b - width * 0.5**j for j in range(1, levels + 1)] + [b]
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        for i in range(refine):
            out.append((lo + (hi - lo) * i / refine, lo + (hi - lo) * (i + 1) / refine))
    return out


def _plain_panels(a: float, b: float, refine: int):
    out = []
    for i in range(refine):
        out.append((a + (b - a) * i / refine, a + (b - a) * (i + 1) / refine))
    return out


def _lagrange_weights(ts: np.ndarray, s: float) -> np.ndarray:
    """Barycentric-free Lagrange weights for the stencil times ts at point s."""
    n = ts.size
    w = np.ones(n)
    for i in range(n):
        for j in range(n):
            if i != j:
                w[i] *= (s - ts[j]) / (ts[i] - ts[j])
    return w


def _stencil(m_panel: int, n_slices: int) -> list:
    """Slice indices for cubic interpolation on panel [t_{m-1}, t_m]."""
    lo = max(0, min(m_panel - 2, n_slices - 3))
    return list(range(lo, min(lo + 4, n_slices + 1)))


def grid_l2(components: np.ndarray, grid: BoxGrid) -> float:
    return float(np.sqrt(np.sum(components * components) * grid.spacing**grid.d))


class _SpectralOps:
    """Shared spectral machinery bound to one grid."""

    def __init__(self, grid: BoxGrid):
        self.grid = grid
        self.k = grid.wavenumbers
        self.k2 = grid.k_squared
        self.mask = grid.dealias_mask
        with np.errstate(divide="ignore", invalid="ignore"):
            self.inv_k2 = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)

    def fft(self, comps):
        return np.fft.fftn(comps, axes=tuple(range(1, self.grid.d + 1)))

    def ifft(self, spec):
        return np.real(np.fft.ifftn(spec, axes=tuple(range(1, self.grid.d + 1))))

    def project(self, spec):
        dot = np.zeros(self.grid.shape, dtype=complex)
        for ax in range(self.grid.d):
            dot += self.k[ax] * spec[ax]
        dot *= self.inv_k2
        return np.stack([spec[ax] - self.k[ax] * dot for ax in range(self.grid.d)])

    def momentum_flux_divergence(self, u_phys: np.ndarray, drift: np.ndarray):
        """Q = P[-i k . W] for W the dealiased product (u + drift) (x) (u + drift).

        The projected divergence of the momentum flux: the spectral integrand
        of the bilinear Duhamel term.  Mean mode vanishes identically.
        """
        d = self.grid.d
        full = u_phys + drift.reshape((d,) + (1,) * d)
        div = np.zeros((d,) + self.grid.shape, dtype=complex)
        for kk in range(d):
            for ll in range(kk, d):
                w_hat = np.fft.fftn(full[kk] * full[ll])
                w_hat *= self.mask
                div[kk] += 1j * self.k[ll] * w_hat
                if ll != kk:
                    div[ll] += 1j * self.k[kk] * w_hat
        return self.project(div)


class Trajectory:
    """Solved trajectory: mean-free snapshots plus analytic drift bookkeeping."""

    def __init__(self, grid: BoxGrid, times: np.ndarray, snapshots: list,
                 drift: np.ndarray, iteration_log: list, scenario_hash: str = ""):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.snapshots = snapshots          # list of (d, N..N) mean-free arrays
        self.drift = np.asarray(drift)      # (M+1, d) uniform box drift
        self.iteration_log = list(iteration_log)
        self.scenario_hash = scenario_hash
        self._flux_cache = {}

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def contractive(self) -> bool:
        log = self.iteration_log
        return all(log[i] < log[i - 1] for i in range(2, len(log)))

    def slice_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"time {t} is not a sample time of this trajectory")
        return i

    def nearest_time(self, t: float) -> float:
        """Snap to the closest sample time."""
        return float(self.times[int(np.argmin(np.abs(self.times - t)))])

    def field_at(self, t: float, include_drift: bool = False) -> VectorFieldGrid:
        i = self.slice_index(t)
        comps = self.snapshots[i]
        if include_drift:
            comps = comps + self.drift[i].reshape((self.grid.d,) + (1,) * self.grid.d)
        return VectorFieldGrid(self.grid, comps.copy(), time=float(self.times[i]))

    def decay_constant(self) -> float:
        """Measured sup over slices of (1+|x|)^d |u| on the grid snapshots."""
        w = (1.0 + self.grid.radius) ** self.grid.d
        best = 0.0
        for comps in self.snapshots:
            mag = np.sqrt(np.sum(comps * comps, axis=0))
            best = max(best, float((w * mag).max()))
        return best

    # -- bilinear history on the central |y| <= L/2 sub-box ------------------

    def _central_slices(self):
        n = self.grid.n
        sl = slice(n // 4, 3 * n // 4)
        return (sl,) * self.grid.d

    def flux_history(self):
        """Per-slice momentum flux (u+D)(x)(u+D) restricted to |y| <= L/2.

        Returns (points (n_y, d), fluxes list of (n_y, d, d) arrays).
        """
        if "flux" in self._flux_cache:
            return self._flux_cache["flux"]
        d = self.grid.d
        region = self._central_slices()
        pts = self.grid.points[region].reshape(-1, d)
        fluxes = []
        for i, comps in enumerate(self.snapshots):
            u = comps[(slice(None),) + region].reshape(d, -1)
            u = u + self.drift[i][:, None]
            fluxes.append(np.einsum("ky,ly->ykl", u, u))
        self._flux_cache["flux"] = (pts, fluxes)
        return pts, fluxes

    # -- persistence ---------------------------------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        lines = [f"scenario_hash {self.scenario_hash}",
                 f"slices {len(self.snapshots) - 1}",
                 "iteration_log " + " ".join(repr(float(v)) for v in self.iteration_log)]
        for i, t in enumerate(self.times):
            name = f"u{i:05d}.nsvf"
            VectorFieldGrid(self.grid, self.snapshots[i], time=float(t)).save(
                os.path.join(directory, name))
            drift = " ".join(repr(float(v)) for v in self.drift[i])
            lines.append(f"snapshot {i} {float(t)!r} {name} {drift}")
        with open(os.path.join(directory, "manifest.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")


def load_trajectory(directory) -> Trajectory:
    with open(os.path.join(directory, "manifest.txt")) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    scenario_hash = ""
    entries = []
    log = []
    for ln in lines:
        parts = ln.split()
        if parts[0] == "scenario_hash" and len(parts) > 1:
            scenario_hash = parts[1]
        elif parts[0] == "iteration_log":
            log = [float(v) for v in parts[1:]]
        elif parts[0] == "snapshot":
            entries.append(parts)
    entries.sort(key=lambda p: int(p[1]))
    times, snaps, drifts = [], [], []
    grid = None
    for parts in entries:
        times.append(float(parts[2]))
        fld = read_snapshot(os.path.join(directory, parts[3]))
        grid = fld.grid
        snaps.append(fld.components)
        drifts.append([float(v) for v in parts[4:]])
    return Trajectory(grid, np.array(times), snaps, np.array(drifts), log, scenario_hash)


# ---------------------------------------------------------------------------
# grid-mode Duhamel terms
# ---------------------------------------------------------------------------


def _force_spectra(ops: _SpectralOps, f: ForceModel):
    """Projected, mean-free spectra of the separable force terms."""
    out = []
    if f.kind != "separable":
        raise NotImplementedError("grid solve currently requires a separable force")
    for term in f.terms:
        rho = term.profile.value(ops.grid.points)
        spec = np.stack([np.fft.fftn(rho) * amp for amp in term.amplitude])
        spec[(slice(None),) + (0,) * ops.grid.d] = 0.0  # mean handled as drift
        out.append((term.time_profile, ops.project(spec)))
    return out


def _linear_series(ops: _SpectralOps, f: ForceModel, times: np.ndarray,
                   opts: SolverOptions):
    """L(f) at every slice time by the exponential recursion; mean-free."""
    d = ops.grid.d
    terms = _force_spectra(ops, f)
    acc = np.zeros((d,) + ops.grid.shape, dtype=complex)
    out = [np.zeros((d,) + ops.grid.shape)]
    for m in range(1, times.size):
        t0, t1 = times[m - 1], times[m]
        acc *= np.exp(-(t1 - t0) * ops.k2)
        for lo, hi in _graded_panels(t0, t1, opts.grading_levels, opts.refine):
            mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
            for node, wgt in zip(*_GL4):
                s = mid + half * node
                tau_total = None
                for tau, spec in terms:
                    tv = float(tau.value(s))
                    if tv == 0.0:
                        continue
                    contrib = (half * wgt * tv) * spec
                    tau_total = contrib if tau_total is None else tau_total + contrib
                if tau_total is None:
                    continue
                acc += np.exp(-(t1 - s) * ops.k2) * tau_total
        out.append(ops.ifft(acc))
    return out


def _bilinear_series(ops: _SpectralOps, snapshots: list, drift: np.ndarray,
                     times: np.ndarray, opts: SolverOptions):
    """B(u, u) at every slice time from the momentum-flux history; mean-free."""
    d = ops.grid.d
    n_t = times.size
    cache: dict = {}

    def flux_div(i: int):
        if i not in cache:
            cache[i] = ops.momentum_flux_divergence(snapshots[i], drift[i])
            for key in [k for k in cache if k < i - 2]:
                del cache[key]
        return cache[i]

    acc = np.zeros((d,) + ops.grid.shape, dtype=complex)
    out = [np.zeros((d,) + ops.grid.shape)]
    for m in range(1, n_t):
        t0, t1 = times[m - 1], times[m]
        acc *= np.exp(-(t1 - t0) * ops.k2)
        idx = _stencil(m, n_t - 1)
        ts = times[idx]
        stack = [flux_div(i) for i in idx]
        for lo, hi in _graded_panels(t0, t1, opts.grading_levels, opts.refine):
            mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
            for node, wgt in zip(*_GL4):
                s = mid + half * node
                lw = _lagrange_weights(ts, s)
                q = lw[0] * stack[0]
                for j in range(1, len(stack)):
                    q = q + lw[j] * stack[j]
                acc += (half * wgt) * np.exp(-(t1 - s) * ops.k2) * q
        out.append(ops.ifft(acc))
    return out


def _heat_series(ops: _SpectralOps, a: InitialData, times: np.ndarray):
    d = ops.grid.d
    a_field = a.to_field(ops.grid)
    spec = ops.project(np.fft.fftn(a_field.components, axes=tuple(range(1, d + 1))))
    spec[(slice(None),) + (0,) * d] = 0.0
    out = [ops.ifft(spec)]
    for m in range(1, times.size):
        spec = spec * np.exp(-(times[m] - times[m - 1]) * ops.k2)
        out.append(ops.ifft(spec))
    return out


def picard_solve(a: InitialData, f: ForceModel, grid: BoxGrid, horizon: float,
                 opts: SolverOptions = SolverOptions(),
                 scenario_hash: str = "") -> Trajectory:
    """Iterate the integral formulation to its discrete fixed point.

    Stops when the sup-over-times L2 update norm drops below opts.tol.
    Raises AdmissionError when the measured smallness constants exceed the
    empirical contraction guard, ContractionError when update norms fail to
    decrease, ConvergenceError when max_sweeps is exhausted.
    """
    if math.sqrt(horizon) > grid.length / 8.0 + 1e-12:
        raise ValueError(
            f"sqrt(horizon) = {math.sqrt(horizon):.3g} exceeds L/8 = {grid.length / 8:.3g}; "
            "periodic truncation would contaminate the far field")
    if opts.enforce_admission:
        rep = validate_assumptions(f, ADMISSION_LIMIT, points_per_axis=128, time_samples=129)
        combined = rep.combined() + a.l1_norm + a.sup_weighted
        if combined > ADMISSION_LIMIT:
            raise AdmissionError(
                f"combined force/data constants {combined:.3g} exceed the "
                f"admission threshold {ADMISSION_LIMIT:g}")

    ops = _SpectralOps(grid)
    times = np.linspace(0.0, horizon, opts.slices + 1)
    vol = (2.0 * grid.length) ** grid.d
    drift = np.stack([force_integral(f, float(t)) / vol for t in times])

    heat = _heat_series(ops, a, times)
    lin = _linear_series(ops, f, times, opts)
    fixed = [h + l for h, l in zip(heat, lin)]

    snapshots = [arr.copy() for arr in fixed]
    log = []
    for sweep in range(1, opts.max_sweeps + 1):
        bil = _bilinear_series(ops, snapshots, drift, times, opts)
        update = 0.0
        new_snaps = []
        for m in range(times.size):
            nxt = fixed[m] - bil[m]
            update = max(update, grid_l2(nxt - snapshots[m], grid))
            new_snaps.append(nxt)
        snapshots = new_snaps
        log.append(update)
        if update < opts.tol:
            break
        if len(log) >= 2 and log[-1] >= log[-2] and update > opts.tol * 10:
            raise ContractionError(
                f"update norms stopped decreasing at sweep {sweep}: {log}", log)
    else:
        raise ConvergenceError(
            f"no convergence to tol={opts.tol:g} in {opts.max_sweeps} sweeps: {log}", log)

    return Trajectory(grid, times, snapshots, drift, log, scenario_hash)


def integral_residual(traj: Trajectory, a: InitialData, f: ForceModel,
                      opts: SolverOptions = SolverOptions()) -> float:
    """Max over sample times of the L2 defect of the integral equation."""
    ops = _SpectralOps(traj.grid)
    heat = _heat_series(ops, a, traj.times)
    lin = _linear_series(ops, f, traj.times, opts)
    bil = _bilinear_series(ops, traj.snapshots, traj.drift, traj.times, opts)
    worst = 0.0
    for m in range(traj.times.size):
        defect = traj.snapshots[m] - (heat[m] + lin[m] - bil[m])
        worst = max(worst, grid_l2(defect, traj.grid))
    return worst


# ---------------------------------------------------------------------------
# point-mode Duhamel terms
# ---------------------------------------------------------------------------


def _require_points(x, d: int) -> tuple:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(1, -1) if single else x.reshape(-1, d)
    return pts, single, x.shape[:-1]


def _linear_point(f: ForceModel, x: np.ndarray, t: float, opts: SolverOptions,
                  slices_hint: int = 64):
    """L(f)(x, t) by closed-form time quadrature; returns (values, error_estimate).

    Each Gaussian force term contributes tau(s) * P[c rho_{t-s}](x - center)
    with rho_{t-s} the heat-fattened bump; the projection of a radial Gaussian
    is evaluated in closed form, so only the s-integral is numerical.
    """
    if not f.point_evaluable:
        raise NotImplementedError("point-mode linear response needs Gaussian force terms")
    d = f.d
    out = np.zeros_like(x)
    coarse = np.zeros_like(x)
    if t == 0.0 or not f.terms:
        return out, 0.0
    n_panels = max(8, min(slices_hint, 64))
    edges = np.linspace(0.0, t, n_panels + 1)
    panels = []
    for i in range(n_panels - 1):
        panels.extend(_plain_panels(edges[i], edges[i + 1], opts.refine))
    panels.extend(_graded_panels(edges[-2], edges[-1], opts.grading_levels, opts.refine))
    for lo, hi in panels:
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        for rule, target in ((_GL4, out), (_GL2, coarse)):
            for node, wgt in zip(*rule):
                s = mid + half * node
                for term in f.terms:
                    tv = float(term.time_profile.value(s))
                    if tv == 0.0:
                        continue
                    amp, width = term.profile.heat_evolved(t - s)
                    z = x - np.asarray(term.profile.center)
                    val = kernels.projected_gaussian(z, amp, width, np.asarray(term.amplitude), d)
                    target += (half * wgt * tv) * val
    err = float(np.max(np.linalg.norm(out - coarse, axis=-1), initial=0.0))
    return out, err


def _heat_point(a: InitialData, x: np.ndarray, t: float):
    return a.value(x, t), 0.0


def _bilinear_point(traj: Trajectory, x: np.ndarray, t: float,
                    opts: SolverOptions, coarsen: int = 8, chunk: int = 32,
                    probe: int = 16):
    """B(u,u)(x, t) by kernel quadrature over the |y| <= L/2 history.

    Returns (values, error_budget dict).  Quadrature error is estimated on a
    probe subset of the batch (embedded lower-order rule in s, stride-2
    subsample in y; both doubled as a safety margin); the |y| > L/2
    truncation is bounded analytically from the measured decay constant of
    the trajectory.
    """
    d = traj.grid.d
    m_t = traj.slice_index(t)
    pts_y, fluxes = traj.flux_history()
    cell = traj.grid.spacing**d
    out = np.zeros_like(x)
    if m_t == 0:
        return out, {"time_quadrature": 0.0, "space_quadrature": 0.0, "truncation": 0.0}

    # panels: groups of `coarsen` slices, graded near s = t
    idx_edges = list(range(0, m_t, coarsen)) + [m_t]
    panels = []
    for i in range(len(idx_edges) - 2):
        panels.extend(_plain_panels(traj.times[idx_edges[i]], traj.times[idx_edges[i + 1]],
                                    opts.refine))
    panels.extend(_graded_panels(traj.times[idx_edges[-2]], traj.times[idx_edges[-1]],
                                 opts.grading_levels, opts.refine))

    n_slices = traj.times.size - 1
    n_probe = min(probe, x.shape[0])
    coarse_s = np.zeros((n_probe, d))
    sub = np.zeros((n_probe, d))
    stride_mask = np.zeros(pts_y.shape[0], dtype=bool)
    side = round(pts_y.shape[0] ** (1.0 / d))
    stride_idx = np.arange(pts_y.shape[0]).reshape((side,) * d)
    stride_mask[stride_idx[(slice(None, None, 2),) * d].ravel()] = True

    def flux_at(s):
        m_panel = int(np.searchsorted(traj.times, s, side="right"))
        idx = _stencil(m_panel, n_slices)
        lw = _lagrange_weights(traj.times[idx], s)
        flux_s = lw[0] * fluxes[idx[0]]
        for j in range(1, len(idx)):
            flux_s = flux_s + lw[j] * fluxes[idx[j]]
        return flux_s

    for lo, hi in panels:
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        for node, wgt in zip(*_GL4):
            s = mid + half * node
            flux_s = flux_at(s)
            for c0 in range(0, x.shape[0], chunk):
                xs = x[c0:c0 + chunk]
                z = xs[:, None, :] - pts_y[None, :, :]
                vals = kernels.oseen_grad_contract(z, t - s, d, flux_s[None, :, :, :])
                out[c0:c0 + chunk] += (half * wgt * cell) * vals.sum(axis=1)
            zp = x[:n_probe, None, :] - pts_y[None, stride_mask, :]
            vs = kernels.oseen_grad_contract(zp, t - s, d, flux_s[None, stride_mask])
            sub += (half * wgt * cell * 2**d) * vs.sum(axis=1)
        for node, wgt in zip(*_GL2):
            s = mid + half * node
            flux_s = flux_at(s)
            zp = x[:n_probe, None, :] - pts_y[None, :, :]
            vals = kernels.oseen_grad_contract(zp, t - s, d, flux_s[None, :, :, :])
            coarse_s += (half * wgt * cell) * vals.sum(axis=1)

    c_dec = traj.decay_constant()
    c_f = kernels.oseen_l1_gradient_norm(1.0, d)
    tail = c_dec**2 * (1.0 + traj.grid.length / 2.0) ** (-2 * d) * 2.0 * c_f * math.sqrt(t)
    budget = {
        "time_quadrature": 2.0 * float(
            np.max(np.linalg.norm(out[:n_probe] - coarse_s, axis=-1), initial=0.0)),
        "space_quadrature": 2.0 * float(
            np.max(np.linalg.norm(out[:n_probe] - sub, axis=-1), initial=0.0)),
        "truncation": float(tail),
    }
    return out, budget


def _bilinear_grid_at(traj: Trajectory, x: np.ndarray, t: float, opts: SolverOptions):
    """Interior fallback: spectral B evaluated at arbitrary points by direct
    Fourier summation of the dealiased modes."""
    ops = _SpectralOps(traj.grid)
    m_t = traj.slice_index(t)
    times = traj.times[: m_t + 1]
    series = _bilinear_series(ops, traj.snapshots, traj.drift, times, opts)
    spec = np.fft.fftn(series[-1], axes=tuple(range(1, traj.grid.d + 1)))
    spec *= traj.grid.dealias_mask
    keep = np.abs(spec).max(axis=0) > 0
    modes = np.argwhere(keep)
    vals = np.zeros((x.shape[0], traj.grid.d))
    kvecs = np.stack([np.broadcast_to(ops.k[ax], traj.grid.shape)[keep]
                      for ax in range(traj.grid.d)], axis=-1)
    amps = spec[:, keep] / traj.grid.n**traj.grid.d
    phase = np.exp(1j * x @ kvecs.T)
    vals = np.real(phase @ amps.T)
    return vals


@dataclass
class FarFieldSample:
    x: np.ndarray
    t: float
    velocity: np.ndarray
    error_budget: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(v < 0 for v in self.error_budget.values()):
            raise ValueError("error budget entries must be nonnegative")

    @property
    def total_error(self) -> float:
        return sum(self.error_budget.values())


def farfield_velocity(traj: Trajectory, a: InitialData, f: ForceModel, x, t: float,
                      opts: SolverOptions = SolverOptions(), with_bilinear: bool = True):
    """Velocity at arbitrary points from the closed-form Duhamel terms.

    Returns (values (..., d), error_budget).  Points with |x| >= L/2 use the
    gradient-kernel quadrature for the bilinear term; interior points fall
    back to the spectral representation (the kernel route loses its distance
    cushion there).
    """
    d = traj.grid.d
    pts, single, lead = _require_points(x, d)
    t = float(t)
    heat_vals, heat_err = _heat_point(a, pts, t)
    lin_vals, lin_err = _linear_point(f, pts, t, opts, slices_hint=traj.times.size - 1)
    budget = {"heat": heat_err, "linear_quadrature": lin_err}
    total = heat_vals + lin_vals
    if with_bilinear:
        radii = np.linalg.norm(pts, axis=-1)
        far = radii >= traj.grid.length / 2.0
        bil = np.zeros_like(pts)
        if np.any(far):
            vals, b_budget = _bilinear_point(traj, pts[far], t, opts)
            bil[far] = vals
            budget.update({f"bilinear_{k}": v for k, v in b_budget.items()})
        if np.any(~far):
            bil[~far] = _bilinear_grid_at(traj, pts[~far], t, opts)
        total = total - bil
    out = total.reshape(lead + (d,)) if not single else total[0]
    return out, budget


def farfield_eval(traj: Trajectory, a: InitialData, f: ForceModel, x, t: float,
                  opts: SolverOptions = SolverOptions()) -> FarFieldSample:
    """Single-point far-field sample with its error budget.

    Requires |x| beyond the supports of the datum and the force, where the
    asymptotic statements live.
    """
    pts, _, _ = _require_points(x, traj.grid.d)
    r = float(np.linalg.norm(pts[0]))
    guard = max(a.support_radius(), f.support_radius())
    if r <= guard:
        raise ValueError(
            f"|x| = {r:.3g} is inside the data/force support radius {guard:.3g}")
    vel, budget = farfield_velocity(traj, a, f, pts[0], t, opts)
    return FarFieldSample(x=np.asarray(pts[0]), t=t, velocity=vel, error_budget=budget)


# ---------------------------------------------------------------------------
# public op wrappers (grid | point mode)
# ---------------------------------------------------------------------------


def linear_response(f: ForceModel, t: float, *, grid: BoxGrid | None = None,
                    x=None, slices: int = 64,
                    opts: SolverOptions = SolverOptions()):
    """L(f) at time t: on a grid (mean-free VectorFieldGrid) or at points x."""
    if (grid is None) == (x is None):
        raise ValueError("pass exactly one of grid= or x=")
    if t < 0:
        raise ValueError("time must be >= 0")
    if grid is not None:
        ops = _SpectralOps(grid)
        times = np.linspace(0.0, t, slices + 1) if t > 0 else np.array([0.0])
        series = _linear_series(ops, f, times, opts)
        return VectorFieldGrid(grid, series[-1], time=t)
    pts, single, lead = _require_points(x, f.d)
    vals, err = _linear_point(f, pts, t, opts, slices_hint=slices)
    out = vals.reshape(lead + (f.d,)) if not single else vals[0]
    return out, err


def bilinear_term(traj: Trajectory, t: float, *, grid_mode: bool = True, x=None,
                  opts: SolverOptions = SolverOptions()):
    """B(u,u)(t) from the trajectory history: grid field or point values."""
    if t > traj.horizon + 1e-12:
        raise ValueError("time beyond the trajectory horizon")
    if grid_mode and x is None:
        ops = _SpectralOps(traj.grid)
        m_t = traj.slice_index(t)
        series = _bilinear_series(ops, traj.snapshots, traj.drift,
                                  traj.times[: m_t + 1], opts)
        return VectorFieldGrid(traj.grid, series[-1], time=t)
    pts, single, lead = _require_points(x, traj.grid.d)
    vals, budget = _bilinear_point(traj, pts, t, opts)
    out = vals.reshape(lead + (traj.grid.d,)) if not single else vals[0]
    return out, budget


def scenario_digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:16]
