"""One-body phase-space density families and their diagnostics.

Every family lives on the cube [0, box]^3 times velocity space and exposes a
vectorized ``density(r, v, t)``. The analytic families carry enough structure
(per-axis factorization, Gaussian velocity parts) that normalization and
entropy reduce to small 1-D/3-D Gauss-Legendre compositions; the tabulated
family integrates on its own grid.

Velocity-space integrals truncate at v_max thermal speeds per axis (default 6,
Gaussian tails below 1e-7).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quadrature import QuadratureSpec, gauss_legendre
from .seeding import derive_rng

_TWO_PI = 2.0 * math.pi


@dataclass
class EntropyReport:
    S: float
    quadrature_error: float
    zero_fraction: float = 0.0


@dataclass
class SmoothnessReport:
    L_rho: float
    L_rho_initial: float
    delta: float
    delta_initial: float
    probe_count: int


def _maxwell(v, mean, v_th):
    v = np.asarray(v, dtype=float)
    w = v - mean
    q = (w * w).sum(axis=-1)
    return (_TWO_PI * v_th ** 2) ** -1.5 * np.exp(-0.5 * q / v_th ** 2)


class OneBodyPdf:
    """Base interface. Subclasses must set family_tag, box, v_th."""

    family_tag = "abstract"
    time_dependent = False

    def density(self, r, v, t: float = 0.0):
        raise NotImplementedError

    def position_density(self, r, t: float = 0.0):
        raise NotImplementedError

    def drift(self, r, t: float = 0.0):
        """Mean velocity at position r, broadcast to r's shape."""
        r = np.asarray(r, dtype=float)
        return np.zeros_like(r)

    def log_position_gradient(self, r, v, t: float = 0.0):
        """Analytic d(ln rho)/dr, or None when only FD is available."""
        return None

    def sample_positions(self, count: int, rng):
        """Draw positions from the spatial marginal using a live Generator."""
        raise NotImplementedError

    def sample_velocities(self, positions, rng):
        """Draw velocities conditional on the given positions."""
        raise NotImplementedError

    def sample(self, count: int, seed: int, t: float = 0.0):
        rng = derive_rng(seed, "pdf", self.family_tag)
        r = self.sample_positions(count, rng)
        return r, self.sample_velocities(r, rng)

    # -- quadrature hooks -------------------------------------------------
    def normalization(self, quad: QuadratureSpec):
        raise NotImplementedError

    def entropy(self, quad: QuadratureSpec) -> EntropyReport:
        raise NotImplementedError


def _axis_entropy(fvals, w):
    # -sum w f ln f, guarding zeros
    mask = fvals > 0.0
    out = np.zeros_like(fvals)
    out[mask] = fvals[mask] * np.log(fvals[mask])
    return -float((w * out).sum())


class _GaussianVelocityMixin:
    """Velocity part = isotropic Maxwell at a (possibly position-bound) drift."""

    def _velocity_normalization_1d(self, quad: QuadratureSpec):
        # per-axis integral of the standard Gaussian over the truncated box
        x, w = gauss_legendre(quad.velocity_nodes, -quad.v_max * self.v_th,
                              quad.v_max * self.v_th)
        g = np.exp(-0.5 * (x / self.v_th) ** 2) / (math.sqrt(_TWO_PI) * self.v_th)
        return float((w * g).sum())

    def _velocity_entropy(self, quad: QuadratureSpec):
        x, w = gauss_legendre(quad.velocity_nodes, -quad.v_max * self.v_th,
                              quad.v_max * self.v_th)
        g = np.exp(-0.5 * (x / self.v_th) ** 2) / (math.sqrt(_TWO_PI) * self.v_th)
        # 3 independent axes: S_vel = 3 * S_axis
        return 3.0 * _axis_entropy(g, w)


class UniformMaxwellian(_GaussianVelocityMixin, OneBodyPdf):
    """Spatially uniform density with an isotropic Maxwell velocity law."""

    family_tag = "uniform_maxwell"

    def __init__(self, box: float, v_th: float = 1.0, scale: float = 1.0):
        self.box = float(box)
        self.v_th = float(v_th)
        self.scale = float(scale)  # overall multiplier, for linearity tests

    def position_density(self, r, t=0.0):
        r = np.asarray(r, dtype=float)
        inside = np.all((r >= 0) & (r <= self.box), axis=-1)
        return self.scale * inside / self.box ** 3

    def density(self, r, v, t=0.0):
        return self.position_density(r) * _maxwell(v, 0.0, self.v_th)

    def log_position_gradient(self, r, v, t=0.0):
        r = np.asarray(r, dtype=float)
        return np.zeros_like(r)

    def sample_positions(self, count, rng):
        return rng.uniform(0.0, self.box, size=(count, 3))

    def sample_velocities(self, positions, rng):
        return rng.normal(scale=self.v_th, size=(len(positions), 3))

    def normalization(self, quad):
        j = self._velocity_normalization_1d(quad)
        coarse = self._velocity_normalization_1d(quad.coarsened())
        val = self.scale * j ** 3
        return val, abs(val - self.scale * coarse ** 3) + 1e-15 * abs(val)

    def entropy(self, quad):
        if self.scale != 1.0:
            raise ValueError("entropy defined for normalized densities only")
        s_pos = 3.0 * math.log(self.box)
        s_vel = self._velocity_entropy(quad)
        err = abs(s_vel - self._velocity_entropy(quad.coarsened()))
        return EntropyReport(S=s_pos + s_vel, quadrature_error=err + 1e-14)


class DriftedMaxwellian(_GaussianVelocityMixin, OneBodyPdf):
    """Uniform position density, Maxwell velocities around a drift field.

    drift(r) = u0 + shear_rate * (x - box/2) * yhat. With shear_rate = 0 this
    is the constant-drift family; a nonzero shear gives the drift a spatial
    gradient while keeping the local velocity law Maxwellian.
    """

    family_tag = "drifted_maxwell"

    def __init__(self, box, v_th=1.0, u0=(0.0, 0.0, 0.0), shear_rate: float = 0.0):
        self.box = float(box)
        self.v_th = float(v_th)
        self.u0 = np.asarray(u0, dtype=float)
        self.shear_rate = float(shear_rate)

    def drift(self, r, t=0.0):
        r = np.asarray(r, dtype=float)
        u = np.broadcast_to(self.u0, r.shape).copy()
        if self.shear_rate != 0.0:
            u[..., 1] = u[..., 1] + self.shear_rate * (r[..., 0] - self.box / 2.0)
        return u

    def position_density(self, r, t=0.0):
        r = np.asarray(r, dtype=float)
        inside = np.all((r >= 0) & (r <= self.box), axis=-1)
        return inside / self.box ** 3

    def density(self, r, v, t=0.0):
        return self.position_density(r) * _maxwell(v, self.drift(r), self.v_th)

    def log_position_gradient(self, r, v, t=0.0):
        r = np.asarray(r, dtype=float)
        v = np.asarray(v, dtype=float)
        grad = np.zeros(np.broadcast_shapes(r.shape, v.shape), dtype=float)
        if self.shear_rate != 0.0:
            w = v - self.drift(r)
            grad[..., 0] = w[..., 1] * self.shear_rate / self.v_th ** 2
        return grad

    def sample_positions(self, count, rng):
        return rng.uniform(0.0, self.box, size=(count, 3))

    def sample_velocities(self, positions, rng):
        return self.drift(positions) + rng.normal(
            scale=self.v_th, size=(len(positions), 3))

    def normalization(self, quad):
        # velocity box recentered on the local drift makes the integral
        # position independent; the residual is the fixed-frame truncation
        j = self._velocity_normalization_1d(quad)
        coarse = self._velocity_normalization_1d(quad.coarsened())
        return j ** 3, abs(j ** 3 - coarse ** 3) + 1e-15

    def entropy(self, quad):
        s_pos = 3.0 * math.log(self.box)
        s_vel = self._velocity_entropy(quad)
        err = abs(s_vel - self._velocity_entropy(quad.coarsened()))
        return EntropyReport(S=s_pos + s_vel, quadrature_error=err + 1e-14)


class TiltedExponential(_GaussianVelocityMixin, OneBodyPdf):
    """Position density proportional to exp(a . r) on the cube, Maxwell velocities."""

    family_tag = "tilted_exponential"

    def __init__(self, box, tilt=(1.0, 0.0, 0.0), v_th=1.0):
        self.box = float(box)
        self.v_th = float(v_th)
        self.tilt = np.asarray(tilt, dtype=float)
        self._axis_norm = np.array(
            [
                (math.expm1(a * self.box) / a) if a != 0.0 else self.box
                for a in self.tilt
            ]
        )

    def position_density(self, r, t=0.0):
        r = np.asarray(r, dtype=float)
        inside = np.all((r >= 0) & (r <= self.box), axis=-1)
        val = np.exp((r * self.tilt).sum(axis=-1)) / self._axis_norm.prod()
        return val * inside

    def density(self, r, v, t=0.0):
        return self.position_density(r) * _maxwell(v, 0.0, self.v_th)

    def drift(self, r, t=0.0):
        return np.zeros_like(np.asarray(r, dtype=float))

    def log_position_gradient(self, r, v, t=0.0):
        r = np.asarray(r, dtype=float)
        return np.broadcast_to(self.tilt, r.shape).copy()

    def sample_positions(self, count, rng):
        u = rng.uniform(size=(count, 3))
        r = np.empty((count, 3))
        for i, a in enumerate(self.tilt):
            if a == 0.0:
                r[:, i] = u[:, i] * self.box
            else:
                # inverse CDF of a e^{ax}/ (e^{aL}-1) on [0, L]
                r[:, i] = np.log1p(u[:, i] * math.expm1(a * self.box)) / a
        return r

    def sample_velocities(self, positions, rng):
        return rng.normal(scale=self.v_th, size=(len(positions), 3))

    def _axis_position_quads(self, quad):
        out = []
        for i, a in enumerate(self.tilt):
            x, w = gauss_legendre(quad.position_nodes, 0.0, self.box)
            p = np.exp(a * x) / self._axis_norm[i]
            out.append((p, w))
        return out

    def normalization(self, quad):
        jv = self._velocity_normalization_1d(quad)
        pos = 1.0
        for p, w in self._axis_position_quads(quad):
            pos *= float((w * p).sum())
        val = pos * jv ** 3
        coarse_pos = 1.0
        for p, w in self._axis_position_quads(quad.coarsened()):
            coarse_pos *= float((w * p).sum())
        coarse = coarse_pos * self._velocity_normalization_1d(quad.coarsened()) ** 3
        return val, abs(val - coarse) + 1e-15

    def entropy(self, quad):
        def s_pos(q):
            total = 0.0
            for p, w in self._axis_position_quads(q):
                total += _axis_entropy(p, w)
            return total

        s = s_pos(quad) + self._velocity_entropy(quad)
        err = abs(s - (s_pos(quad.coarsened()) + self._velocity_entropy(quad.coarsened())))
        return EntropyReport(S=s, quadrature_error=err + 1e-14)


class SinusoidalMaxwellian(_GaussianVelocityMixin, OneBodyPdf):
    """Density (1 + alpha sin(2 pi x/box + phase))/box^3 times a Maxwell law."""

    family_tag = "sinusoidal_maxwell"

    def __init__(self, box, alpha=0.2, v_th=1.0, phase: float = 0.0, axis: int = 0):
        if not 0 <= alpha < 1:
            raise ValueError("alpha must be in [0, 1) for strict positivity")
        self.box = float(box)
        self.alpha = float(alpha)
        self.v_th = float(v_th)
        self.phase = float(phase)
        self.axis = int(axis)

    def _profile(self, x):
        k = _TWO_PI / self.box
        return 1.0 + self.alpha * np.sin(k * x + self.phase)

    def position_density(self, r, t=0.0):
        r = np.asarray(r, dtype=float)
        inside = np.all((r >= 0) & (r <= self.box), axis=-1)
        return self._profile(r[..., self.axis]) / self.box ** 3 * inside

    def density(self, r, v, t=0.0):
        return self.position_density(r) * _maxwell(v, 0.0, self.v_th)

    def log_position_gradient(self, r, v, t=0.0):
        r = np.asarray(r, dtype=float)
        k = _TWO_PI / self.box
        x = r[..., self.axis]
        grad = np.zeros_like(r)
        grad[..., self.axis] = self.alpha * k * np.cos(k * x + self.phase) / self._profile(x)
        return grad

    def sample_positions(self, count, rng):
        out = np.empty((count, 3))
        # rejection along the modulated axis, bound (1+alpha)
        need = count
        got = 0
        while need > 0:
            cand = rng.uniform(0.0, self.box, size=max(need * 2, 16))
            acc = rng.uniform(0.0, 1.0 + self.alpha, size=cand.size) < self._profile(cand)
            take = cand[acc][:need]
            out[got:got + take.size, self.axis] = take
            got += take.size
            need -= take.size
        other = [i for i in range(3) if i != self.axis]
        out[:, other] = rng.uniform(0.0, self.box, size=(count, 2))
        return out

    def sample_velocities(self, positions, rng):
        return rng.normal(scale=self.v_th, size=(len(positions), 3))

    def _pos_quad(self, q):
        x, w = gauss_legendre(q.position_nodes * 4, 0.0, self.box)
        return self._profile(x) / self.box, w

    def normalization(self, quad):
        jv = self._velocity_normalization_1d(quad)
        p, w = self._pos_quad(quad)
        val = float((w * p).sum()) * jv ** 3
        pc, wc = self._pos_quad(quad.coarsened())
        coarse = float((wc * pc).sum()) * self._velocity_normalization_1d(quad.coarsened()) ** 3
        return val, abs(val - coarse) + 1e-15

    def entropy(self, quad):
        def s_pos(q):
            p, w = self._pos_quad(q)
            # remaining two axes are uniform over box
            return _axis_entropy(p, w) + 2.0 * math.log(self.box)

        s = s_pos(quad) + self._velocity_entropy(quad)
        err = abs(s - (s_pos(quad.coarsened()) + self._velocity_entropy(quad.coarsened())))
        return EntropyReport(S=s, quadrature_error=err + 1e-14)


class VelocityMixture(OneBodyPdf):
    """Uniform position density with a mixture-of-Maxwellians velocity law.

    components: sequence of (weight, mean(3,), v_th). Covers two-beam and
    two-temperature inputs. v_th reported is the mass-weighted rms width.
    """

    family_tag = "velocity_mixture"

    def __init__(self, box, components):
        self.box = float(box)
        self.components = [
            (float(w), np.asarray(m, dtype=float), float(s)) for w, m, s in components
        ]
        wsum = sum(w for w, _, _ in self.components)
        if abs(wsum - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        self.v_th = math.sqrt(
            sum(w * (s ** 2 + (m * m).sum() / 3.0) for w, m, s in self.components)
        )

    def mixture_velocity_density(self, v):
        v = np.asarray(v, dtype=float)
        out = np.zeros(v.shape[:-1], dtype=float)
        for w, m, s in self.components:
            out = out + w * _maxwell(v, m, s)
        return out

    def position_density(self, r, t=0.0):
        r = np.asarray(r, dtype=float)
        inside = np.all((r >= 0) & (r <= self.box), axis=-1)
        return inside / self.box ** 3

    def density(self, r, v, t=0.0):
        return self.position_density(r) * self.mixture_velocity_density(v)

    def drift(self, r, t=0.0):
        r = np.asarray(r, dtype=float)
        u = sum(w * m for w, m, _ in self.components)
        return np.broadcast_to(u, r.shape).copy()

    def log_position_gradient(self, r, v, t=0.0):
        return np.zeros_like(np.asarray(r, dtype=float))

    def sample_positions(self, count, rng):
        return rng.uniform(0.0, self.box, size=(count, 3))

    def sample_velocities(self, positions, rng):
        count = len(positions)
        ws = np.array([w for w, _, _ in self.components])
        idx = rng.choice(len(self.components), size=count, p=ws)
        v = np.empty((count, 3))
        for k, (w, m, s) in enumerate(self.components):
            sel = idx == k
            v[sel] = m + rng.normal(scale=s, size=(int(sel.sum()), 3))
        return v

    def _vel_grid(self, q):
        span = max(
            abs(np.abs(m).max()) + q.v_max * s for _, m, s in self.components
        )
        x, w = gauss_legendre(q.velocity_nodes, -span, span)
        nodes = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
        weights = (w[:, None, None] * w[None, :, None] * w[None, None, :]).reshape(-1)
        return nodes, weights

    def normalization(self, quad):
        nodes, w = self._vel_grid(quad)
        val = float((w * self.mixture_velocity_density(nodes)).sum())
        nc, wc = self._vel_grid(quad.coarsened())
        coarse = float((wc * self.mixture_velocity_density(nc)).sum())
        return val, abs(val - coarse) + 1e-15

    def entropy(self, quad):
        def s_vel(q):
            nodes, w = self._vel_grid(q)
            f = self.mixture_velocity_density(nodes)
            return _axis_entropy(f, w)

        s = 3.0 * math.log(self.box) + s_vel(quad)
        err = abs(s - (3.0 * math.log(self.box) + s_vel(quad.coarsened())))
        return EntropyReport(S=s, quadrature_error=err + 1e-14)


class TabulatedPdf(OneBodyPdf):
    """Density tabulated on a rectilinear position x velocity grid.

    Evaluation is multilinear in all six axes; points outside the grid evaluate
    to zero. The CSV form has header x,y,z,vx,vy,vz,density with rows in
    C-order over (x, y, z, vx, vy, vz), vz fastest.
    """

    family_tag = "tabulated"

    def __init__(self, pos_axes, vel_axes, values, box=None, v_th=1.0):
        self.pos_axes = [np.asarray(a, dtype=float) for a in pos_axes]
        self.vel_axes = [np.asarray(a, dtype=float) for a in vel_axes]
        self.values = np.asarray(values, dtype=float)
        expected = tuple(len(a) for a in self.pos_axes + self.vel_axes)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != axes {expected}")
        if np.any(self.values < 0):
            raise ValueError("tabulated densities must be non-negative")
        self.box = float(box) if box is not None else float(self.pos_axes[0][-1])
        self.v_th = float(v_th)

    @property
    def axes(self):
        return self.pos_axes + self.vel_axes

    def _interp(self, pts):
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 6)
        m = flat.shape[0]
        idx = np.empty((m, 6), dtype=np.intp)
        frac = np.empty((m, 6), dtype=float)
        inside = np.ones(m, dtype=bool)
        for k, ax in enumerate(self.axes):
            x = flat[:, k]
            inside &= (x >= ax[0]) & (x <= ax[-1])
            i = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2)
            idx[:, k] = i
            frac[:, k] = (x - ax[i]) / (ax[i + 1] - ax[i])
        frac = np.clip(frac, 0.0, 1.0)
        out = np.zeros(m, dtype=float)
        for corner in range(64):
            w = np.ones(m, dtype=float)
            ind = []
            for k in range(6):
                hi = (corner >> k) & 1
                w *= frac[:, k] if hi else (1.0 - frac[:, k])
                ind.append(idx[:, k] + hi)
            out += w * self.values[tuple(ind)]
        out[~inside] = 0.0
        return out.reshape(pts.shape[:-1])

    def density(self, r, v, t=0.0):
        r = np.asarray(r, dtype=float)
        v = np.asarray(v, dtype=float)
        shape = np.broadcast_shapes(r.shape, v.shape)
        pts = np.concatenate(
            [np.broadcast_to(r, shape), np.broadcast_to(v, shape)], axis=-1
        )
        return self._interp(pts)

    def position_density(self, r, t=0.0):
        # marginal by trapezoid over the velocity axes at interpolated r
        w = _trapezoid_weights_nd(self.vel_axes)
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1, 3)
        out = np.empty(flat.shape[0])
        vgrid = np.stack(
            np.meshgrid(*self.vel_axes, indexing="ij"), axis=-1
        ).reshape(-1, 3)
        for i, rr in enumerate(flat):
            vals = self.density(rr[None, :], vgrid)
            out[i] = float((w.reshape(-1) * vals).sum())
        return out.reshape(r.shape[:-1])

    def _joint_sample(self, count, rng):
        cw = _cell_masses(self.axes, self.values)
        flat = cw.reshape(-1)
        p = flat / flat.sum()
        choice = rng.choice(flat.size, size=count, p=p)
        cells = np.unravel_index(choice, cw.shape)
        pts = np.empty((count, 6))
        for k, ax in enumerate(self.axes):
            lo = ax[cells[k]]
            hi = ax[cells[k] + 1]
            pts[:, k] = rng.uniform(lo, hi)
        return pts

    def sample_positions(self, count, rng):
        return self._joint_sample(count, rng)[:, :3]

    def sample(self, count, seed, t=0.0):
        rng = derive_rng(seed, "pdf", self.family_tag)
        pts = self._joint_sample(count, rng)
        return pts[:, :3], pts[:, 3:]

    def normalization(self, quad=None):
        w = _trapezoid_weights_nd(self.axes)
        val = float((w * self.values).sum())
        # coarse estimate: every other node where possible
        if all(len(a) >= 5 for a in self.axes):
            sl = tuple(slice(None, None, 2) for _ in range(6))
            axes2 = [a[::2] for a in self.axes]
            w2 = _trapezoid_weights_nd(axes2)
            coarse = float((w2 * self.values[sl]).sum())
            err = abs(val - coarse)
        else:
            err = abs(val) * 1e-2
        return val, err

    def entropy(self, quad=None) -> EntropyReport:
        w = _trapezoid_weights_nd(self.axes)
        f = self.values
        mask = f > 0
        s = -float((w[mask] * f[mask] * np.log(f[mask])).sum())
        zero_fraction = 1.0 - mask.mean()
        return EntropyReport(S=s, quadrature_error=abs(s) * 1e-3,
                             zero_fraction=float(zero_fraction))

    def to_csv(self, path):
        from .runio import write_csv

        grids = np.meshgrid(*self.axes, indexing="ij")
        cols = [g.reshape(-1) for g in grids] + [self.values.reshape(-1)]
        rows = np.stack(cols, axis=-1)
        write_csv(path, ["x", "y", "z", "vx", "vy", "vz", "density"], rows)

    @classmethod
    def from_csv(cls, path, box=None, v_th=1.0):
        data = np.genfromtxt(path, delimiter=",", names=True)
        cols = [data[name] for name in ("x", "y", "z", "vx", "vy", "vz")]
        axes = []
        shape = []
        for c in cols:
            u = np.unique(c)
            axes.append(u)
            shape.append(len(u))
        vals = np.asarray(data["density"], dtype=float).reshape(shape)
        return cls(axes[:3], axes[3:], vals, box=box, v_th=v_th)


def _trapezoid_weights_1d(ax):
    w = np.zeros(len(ax))
    d = np.diff(ax)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def _trapezoid_weights_nd(axes):
    ws = [_trapezoid_weights_1d(a) for a in axes]
    out = ws[0]
    for w in ws[1:]:
        out = np.multiply.outer(out, w)
    return out


def _cell_masses(axes, values):
    # mean of corner values times cell volume, per cell
    nd = len(axes)
    acc = values
    for k in range(nd):
        sl_lo = [slice(None)] * nd
        sl_hi = [slice(None)] * nd
        sl_lo[k] = slice(None, -1)
        sl_hi[k] = slice(1, None)
        acc = 0.5 * (acc[tuple(sl_lo)] + acc[tuple(sl_hi)])
    vol = np.ones([len(a) - 1 for a in axes])
    for k, a in enumerate(axes):
        shape = [1] * nd
        shape[k] = len(a) - 1
        vol = vol * np.diff(a).reshape(shape)
    return acc * vol


def tabulate_pdf(pdf: OneBodyPdf, pos_axes, vel_axes, t: float = 0.0) -> TabulatedPdf:
    """Sample an analytic family onto a rectilinear grid."""
    pos_axes = [np.asarray(a, float) for a in pos_axes]
    vel_axes = [np.asarray(a, float) for a in vel_axes]
    P = np.stack(np.meshgrid(*pos_axes, indexing="ij"), axis=-1)
    V = np.stack(np.meshgrid(*vel_axes, indexing="ij"), axis=-1)
    vals = np.empty(P.shape[:-1] + V.shape[:-1])
    flatP = P.reshape(-1, 3)
    flatV = V.reshape(-1, 3)
    for i, rr in enumerate(flatP):
        vals.reshape(flatP.shape[0], -1)[i] = pdf.density(rr, flatV, t)
    return TabulatedPdf(pos_axes, vel_axes, vals, box=pdf.box, v_th=pdf.v_th)


# ---------------------------------------------------------------------------
# module-level diagnostics


def normalization_integral(pdf: OneBodyPdf, quad: QuadratureSpec):
    """Integral of the density over the full phase space, with error estimate."""
    val, err = pdf.normalization(quad)
    return val, err


def bs_entropy(pdf: OneBodyPdf, quad: QuadratureSpec) -> EntropyReport:
    """Differential entropy -int rho ln rho over phase space."""
    return pdf.entropy(quad)


def fd_log_position_gradient(pdf, r, v, t=0.0, h=None):
    """Central finite difference of ln density in the position argument."""
    r = np.asarray(r, dtype=float)
    if h is None:
        h = 1e-5 * pdf.box
    out = np.empty_like(r)
    for k in range(3):
        dr = np.zeros(3)
        dr[k] = h
        hi = pdf.density(r + dr, v, t)
        lo = pdf.density(r - dr, v, t)
        with np.errstate(divide="ignore"):
            out[..., k] = (np.log(hi) - np.log(lo)) / (2 * h)
    return out


def scale_length(pdf: OneBodyPdf, t: float, probes: int, seed: int,
                 model=None, t_initial: float = 0.0) -> SmoothnessReport:
    """Probe-maximization estimate of the density's spatial scale length.

    L_rho is the reciprocal of the largest |grad ln rho| seen over probe
    points drawn half from the pdf itself and half from a uniform grid; it is
    a declared approximation of the infimum over all of phase space. Gradient-
    free densities report an unbounded scale (inf) and delta = 0.
    """
    n_samp = probes // 2
    r_s, v_s = pdf.sample(max(n_samp, 1), seed, t)
    m = max(2, int(round((probes - n_samp) ** (1.0 / 3.0))))
    ax = (np.arange(m) + 0.5) / m * pdf.box
    r_g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    v_g = np.broadcast_to(pdf.drift(r_g, t), r_g.shape).copy()
    r_all = np.concatenate([r_s, r_g], axis=0)
    v_all = np.concatenate([v_s, v_g], axis=0)

    def max_grad(tt):
        g = pdf.log_position_gradient(r_all, v_all, tt)
        if g is None:
            g = np.stack(
                [fd_log_position_gradient(pdf, r, v, tt) for r, v in zip(r_all, v_all)]
            )
        mag = np.linalg.norm(np.asarray(g, dtype=float), axis=-1)
        mag = mag[np.isfinite(mag)]
        return float(mag.max()) if mag.size else 0.0

    g_now = max_grad(t)
    g_init = g_now if t == t_initial and not pdf.time_dependent else max_grad(t_initial)
    L_now = math.inf if g_now == 0.0 else 1.0 / g_now
    L_init = math.inf if g_init == 0.0 else 1.0 / g_init
    sigma = model.sigma if model is not None else 0.0
    delta = 0.0 if math.isinf(L_now) else sigma / L_now
    delta_init = 0.0 if math.isinf(L_init) else sigma / L_init
    return SmoothnessReport(
        L_rho=L_now,
        L_rho_initial=L_init,
        delta=delta,
        delta_initial=delta_init,
        probe_count=int(r_all.shape[0]),
    )


def mc_normalization(pdf: OneBodyPdf, samples: int, seed: int):
    """Monte Carlo cross-check of the normalization integral.

    Uses a uniform-position, wide-Gaussian-velocity proposal.
    """
    rng = derive_rng(seed, "pdf", "mc_normalization")
    width = 3.0 * pdf.v_th + float(np.abs(pdf.drift(np.zeros(3))).max(initial=0.0))
    r = rng.uniform(0.0, pdf.box, size=(samples, 3))
    v = rng.normal(scale=width, size=(samples, 3))
    q = pdf.box ** -3 * _maxwell(v, 0.0, width)
    w = pdf.density(r, v) / q
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(samples))


FAMILY_BUILTINS = (
    "uniform_maxwell",
    "drifted_maxwell",
    "tilted_exponential",
    "sinusoidal_maxwell",
    "tabulated",
)


def build_family(spec: dict, box: float) -> OneBodyPdf:
    """Construct a pdf family from a config dictionary."""
    kind = spec.get("family")
    p = {k: v for k, v in spec.items() if k != "family"}
    if kind == "uniform_maxwell":
        return UniformMaxwellian(box, v_th=p.get("v_th", 1.0))
    if kind == "drifted_maxwell":
        return DriftedMaxwellian(
            box, v_th=p.get("v_th", 1.0), u0=p.get("u0", (0.0, 0.0, 0.0)),
            shear_rate=p.get("shear_rate", 0.0),
        )
    if kind == "tilted_exponential":
        return TiltedExponential(box, tilt=p.get("tilt", (1.0, 0, 0)),
                                 v_th=p.get("v_th", 1.0))
    if kind == "sinusoidal_maxwell":
        return SinusoidalMaxwellian(
            box, alpha=p.get("alpha", 0.2), v_th=p.get("v_th", 1.0),
            phase=p.get("phase", 0.0), axis=p.get("axis", 0),
        )
    if kind == "velocity_mixture":
        return VelocityMixture(box, p["components"])
    if kind == "tabulated":
        return TabulatedPdf.from_csv(p["path"], box=box, v_th=p.get("v_th", 1.0))
    raise ValueError(f"unknown pdf family {kind!r}")
