"""Occupation coefficients: how much phase space the other spheres leave free.

The one-point coefficient k1(r) is the probability that none of the other
N-1 spheres, each distributed with the wall-conditioned one-body position
law reweighted self-consistently by 1/k1, overlaps a sphere inserted at r.
Under independent placements this is (1 - v(r))^(N-1) with v(r) the
reweighted measure of the exclusion ball around r.

The Monte Carlo estimator uses a mixture proposal: a large bank of
wall-conditioned positions shared by every grid node (common random numbers
across nodes and sequence entries) plus per-node draws placed uniformly
inside the exclusion ball, so the rare in-ball measure is resolved with
per-mille relative error instead of Poisson counting noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .geometry import HardSphereModel, pair_theta, wall_theta
from .quadrature import gauss_legendre
from .seeding import derive_rng

BALL_MIX_FRACTION = 0.1  # share of each node's sample count drawn in-ball


# ---------------------------------------------------------------------------
# field container


@dataclass
class OccupationField:
    """k1 tabulated on a cell-centered cubic grid, multilinear off-grid."""

    axis: np.ndarray          # (m,) cell centers, shared by x, y, z
    values: np.ndarray        # (m, m, m)
    stderr: np.ndarray        # (m, m, m)
    model: HardSphereModel | None = None
    info: dict = dataclass_field(default_factory=dict)

    @classmethod
    def constant(cls, grid_nodes: int, box: float, value: float = 1.0,
                 model=None):
        ax = (np.arange(grid_nodes) + 0.5) * box / grid_nodes
        shape = (grid_nodes,) * 3
        return cls(axis=ax, values=np.full(shape, value),
                   stderr=np.zeros(shape), model=model)

    @property
    def grid_nodes(self) -> int:
        return len(self.axis)

    def nodes(self) -> np.ndarray:
        """All grid nodes as an (m^3, 3) array in C order."""
        g = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        return np.stack(g, axis=-1).reshape(-1, 3)

    def interp(self, r) -> np.ndarray:
        """Multilinear interpolation, clamped to the outermost cell centers."""
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1, 3)
        ax = self.axis
        out = np.zeros(flat.shape[0])
        idx = np.empty((flat.shape[0], 3), dtype=np.intp)
        frac = np.empty((flat.shape[0], 3))
        for k in range(3):
            x = np.clip(flat[:, k], ax[0], ax[-1])
            i = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2)
            idx[:, k] = i
            frac[:, k] = (x - ax[i]) / (ax[i + 1] - ax[i])
        frac = np.clip(frac, 0.0, 1.0)
        for corner in range(8):
            w = np.ones(flat.shape[0])
            ind = []
            for k in range(3):
                hi = (corner >> k) & 1
                w = w * (frac[:, k] if hi else 1.0 - frac[:, k])
                ind.append(idx[:, k] + hi)
            out += w * self.values[tuple(ind)]
        return out.reshape(r.shape[:-1])

    def sup_abs_deviation(self, mask=None) -> float:
        dev = np.abs(self.values - 1.0)
        if mask is not None:
            dev = dev[mask.reshape(dev.shape)]
        return float(dev.max())

    def to_csv(self, path):
        from .runio import write_csv

        pts = self.nodes()
        rows = np.column_stack(
            [pts, self.values.reshape(-1), self.stderr.reshape(-1)]
        )
        write_csv(path, ["x", "y", "z", "k1", "stderr"], rows)

    @classmethod
    def from_csv(cls, path, model=None):
        data = np.genfromtxt(path, delimiter=",", names=True)
        x = np.unique(data["x"])
        m = len(x)
        vals = np.asarray(data["k1"], dtype=float).reshape(m, m, m)
        err = np.asarray(data["stderr"], dtype=float).reshape(m, m, m)
        return cls(axis=x, values=vals, stderr=err, model=model)


# ---------------------------------------------------------------------------
# wall-conditioned sampling


def wall_conditioned_positions(pdf, model: HardSphereModel, count: int, rng,
                               max_factor: int = 2000):
    """Draw positions from the pdf conditioned on wall clearance.

    Returns (positions, z_w_estimate, z_w_stderr) where z_w is the
    pdf-measure of the wall-clearance region, read off the acceptance rate.
    """
    out = np.empty((count, 3))
    got = 0
    proposed = 0
    accepted = 0
    while got < count:
        n = max(2 * (count - got), 64)
        r = pdf.sample_positions(n, rng)
        ok = wall_theta(r, model) > 0
        proposed += n
        accepted += int(ok.sum())
        take = r[ok][: count - got]
        out[got:got + take.shape[0]] = take
        got += take.shape[0]
        if proposed > max_factor * count + 10_000:
            raise RuntimeError(
                f"wall-conditioned acceptance too low: {accepted}/{proposed}"
            )
    z = accepted / proposed
    z_se = math.sqrt(max(z * (1.0 - z), 1e-30) / proposed)
    return out, z, z_se


def hat_normalization(model: HardSphereModel, pdf, k1_field,
                      nodes_1d: int = 12) -> float:
    """Z1 = integral of p(r) theta_w(r) k1(r) over the box.

    Normalizes the one-point marginal rho1 = p theta_w k1 / Z1; the
    occupation-stripped density is then rho_hat = rho1 / k1 = p theta_w / Z1.
    theta_w restricts the integral to the wall box, so the rule runs over
    that interval directly; an indicator over the full box would put the
    jump inside the quadrature domain and stall convergence.
    """
    lo, hi = model.sigma / 2.0, model.box - model.sigma / 2.0
    x, w = gauss_legendre(nodes_1d, lo, hi)
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    ww = (w[:, None, None] * w[None, :, None] * w[None, None, :]).reshape(-1)
    dens = pdf.position_density(g) * (wall_theta(g, model) > 0)
    return float((ww * dens * k1_field.interp(g)).sum())


class _CellIndex:
    """Uniform-cell spatial index for fixed points, radius queries."""

    def __init__(self, pts: np.ndarray, cell: float, box: float):
        self.pts = pts
        self.cell = cell
        self.dims = max(1, int(math.ceil(box / cell)))
        ids = self._ids(pts)
        self.order = np.argsort(ids, kind="stable")
        self.sorted_ids = ids[self.order]

    def _ids(self, pts):
        c = np.clip((pts / self.cell).astype(np.int64), 0, self.dims - 1)
        return (c[..., 0] * self.dims + c[..., 1]) * self.dims + c[..., 2]

    def query_ball(self, center, radius):
        lo = np.clip(((center - radius) / self.cell).astype(int), 0, self.dims - 1)
        hi = np.clip(((center + radius) / self.cell).astype(int), 0, self.dims - 1)
        cand = []
        for cx in range(lo[0], hi[0] + 1):
            for cy in range(lo[1], hi[1] + 1):
                base = (cx * self.dims + cy) * self.dims
                a = np.searchsorted(self.sorted_ids, base + lo[2], side="left")
                b = np.searchsorted(self.sorted_ids, base + hi[2], side="right")
                if b > a:
                    cand.append(self.order[a:b])
        if not cand:
            return np.empty(0, dtype=np.intp)
        idx = np.concatenate(cand)
        d2 = ((self.pts[idx] - center) ** 2).sum(axis=1)
        return idx[d2 <= radius * radius]


# ---------------------------------------------------------------------------
# one-point solver


def _ones_field(field: OccupationField) -> bool:
    return bool(np.all(field.values == 1.0))


def solve_k1(model: HardSphereModel, pdf, *, grid_nodes: int = 8,
             samples_per_node: int = 1_000_000, seed: int = 0,
             tol: float = 1e-3, max_iter: int = 12, damping: float = 0.5,
             shards: int = 16, threads: int = 1) -> OccupationField:
    """Self-consistent one-point occupation coefficients on a cubic grid.

    Iterates k -> (1 - v[k])^(N-1) where v[k] is the exclusion-ball measure
    of the wall-conditioned position law reweighted by 1/k (damped Picard on
    oscillation). Raises on non-convergence and when the Monte Carlo error
    exceeds tol/2 at any node.
    """
    n, sigma, box = model.n, model.sigma, model.box
    field = OccupationField.constant(grid_nodes, box, 1.0, model=model)
    if sigma == 0.0:
        field.info.update(iterations=0, converged=True, bank_size=0,
                          samples_per_node=0, seed=seed)
        return field

    beta = BALL_MIX_FRACTION
    bank_size = int(round((1.0 - beta) * samples_per_node))
    ball_per_node = int(round(bank_size * beta / (1.0 - beta)))
    bank_size -= bank_size % shards
    ball_per_node -= ball_per_node % shards
    if bank_size < shards or ball_per_node < shards:
        raise ValueError("samples_per_node too small for the shard count")

    rng_bank = derive_rng(seed, "occupation", "bank")
    bank, z_w, z_w_se = wall_conditioned_positions(pdf, model, bank_size, rng_bank)
    bank_p = pdf.position_density(bank)
    index = _CellIndex(bank, cell=max(sigma, box / 64.0), box=box)
    shard_of = np.repeat(np.arange(shards), bank_size // shards)

    nodes = field.nodes()
    v_ball_vol = 4.0 / 3.0 * math.pi * sigma ** 3
    m_tot = bank_size // shards + ball_per_node // shards
    beta_eff = (ball_per_node / shards) / m_tot

    # per-node ball proposals are drawn once and reused across iterations so
    # the Picard map sees a fixed sample (deterministic fixed point)
    ball_pts = np.empty((nodes.shape[0], ball_per_node, 3))
    for i, r1 in enumerate(nodes):
        rng = derive_rng(seed, "occupation", "ball", i)
        u = rng.random(ball_per_node)
        radius = sigma * np.cbrt(u)
        d = rng.normal(size=(ball_per_node, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        ball_pts[i] = r1 + radius[:, None] * d
    ball_p = pdf.position_density(ball_pts.reshape(-1, 3)).reshape(
        nodes.shape[0], ball_per_node)
    ball_thw = wall_theta(ball_pts.reshape(-1, 3), model).reshape(
        nodes.shape[0], ball_per_node).astype(float)
    in_ball = [index.query_ball(r1, sigma) for r1 in nodes]

    history = []
    converged = False
    iterations = 0
    values = field.values
    stderr = field.stderr
    for it in range(max_iter):
        iterations = it + 1
        ones = _ones_field(field)
        inv_k_bank = np.ones(bank_size) if ones else 1.0 / field.interp(bank)
        den_per_shard = np.array([
            inv_k_bank[shard_of == s].mean() for s in range(shards)
        ])
        new_vals = np.empty(nodes.shape[0])
        new_errs = np.empty(nodes.shape[0])
        for i, r1 in enumerate(nodes):
            idx = in_ball[i]
            pts_w = ball_thw[i]
            p_ball = ball_p[i]
            if ones:
                inv_k_ball = 1.0
                inv_k_hit = 1.0
            else:
                inv_k_ball = 1.0 / field.interp(ball_pts[i])
                inv_k_hit = 1.0 / field.interp(bank[idx]) if idx.size else 1.0
            q_ball = (1.0 - beta_eff) * p_ball * pts_w / z_w + beta_eff / v_ball_vol
            h_ball = p_ball * pts_w * inv_k_ball
            contrib_ball = h_ball / q_ball
            if idx.size:
                p_hit = bank_p[idx]
                q_hit = (1.0 - beta_eff) * p_hit / z_w + beta_eff / v_ball_vol
                contrib_hit = p_hit * inv_k_hit / q_hit
                hit_shards = shard_of[idx]
            else:
                contrib_hit = np.empty(0)
                hit_shards = np.empty(0, dtype=int)
            v_shards = np.empty(shards)
            for s in range(shards):
                lo = s * (ball_per_node // shards)
                hi = lo + ball_per_node // shards
                num = contrib_ball[lo:hi].sum()
                if contrib_hit.size:
                    num += contrib_hit[hit_shards == s].sum()
                # num/m_tot estimates the in-ball mass of p theta_w / k1;
                # z_w * den converts it to the normalized reweighted law
                v_shards[s] = num / m_tot / (z_w * den_per_shard[s])
            v_hat = float(np.clip(v_shards.mean(), 0.0, 1.0 - 1e-12))
            v_se = float(v_shards.std(ddof=1) / math.sqrt(shards))
            # z_w sensitivity: the explicit 1/z_w factor and the mixture
            # denominator shift pull in opposite directions
            bank_q_share = float(
                ((1.0 - beta_eff) * p_ball * pts_w / z_w / q_ball).mean()
            )
            v_se = math.hypot(v_se, v_hat * (z_w_se / z_w) * abs(1.0 - bank_q_share))
            new_vals[i] = (1.0 - v_hat) ** (n - 1)
            new_errs[i] = (n - 1) * (1.0 - v_hat) ** (n - 2) * v_se
        new_vals = new_vals.reshape(values.shape)
        new_errs = new_errs.reshape(values.shape)
        change = float(np.abs(new_vals - field.values).max())
        if len(history) >= 1 and change > history[-1]:
            new_vals = damping * field.values + (1.0 - damping) * new_vals
            change = float(np.abs(new_vals - field.values).max())
        history.append(change)
        field = OccupationField(axis=field.axis, values=new_vals,
                                stderr=new_errs, model=model, info=field.info)
        if change < 0.1 * tol:
            converged = True
            break
    if not converged:
        raise RuntimeError(
            f"occupation solver did not converge in {max_iter} iterations; "
            f"last sup-change {history[-1]:.3e}"
        )
    worst = float(field.stderr.max())
    if worst > 0.5 * tol:
        raise RuntimeError(
            f"occupation Monte Carlo error {worst:.3e} exceeds tol/2 "
            f"({0.5 * tol:.3e}); raise samples_per_node"
        )
    field.info.update(
        iterations=iterations, converged=converged, seed=seed,
        bank_size=bank_size, ball_per_node=ball_per_node, shards=shards,
        z_w=z_w, z_w_stderr=z_w_se, sup_change=history[-1],
        samples_per_node=samples_per_node,
    )
    return field


def brute_force_ks(model: HardSphereModel, pdf, fixed_points, samples: int,
                   seed: int, shards: int = 16):
    """Direct estimate of k_s from the full (N-s)-body conditional law.

    Draws complete sets of the remaining N-s wall-conditioned positions,
    weights each set by its internal pair admissibility, and averages the
    indicator that every draw clears every fixed exclusion ball. Exact for
    every N; cost grows with N, so this is the small-N oracle.
    """
    fixed = np.atleast_2d(np.asarray(fixed_points, dtype=float))
    s = fixed.shape[0]
    n, sigma = model.n, model.sigma
    rest = n - s
    if rest < 0:
        raise ValueError(f"s={s} exceeds the particle count N={n}")
    if sigma == 0.0 or rest == 0:
        return 1.0, 0.0
    rng = derive_rng(seed, "occupation", "brute", s)
    pts, _, _ = wall_conditioned_positions(pdf, model, samples * rest, rng)
    pts = pts.reshape(samples, rest, 3)
    # internal admissibility weight over the N-s free spheres
    w = np.ones(samples, dtype=bool)
    for a in range(rest):
        for b in range(a + 1, rest):
            d2 = ((pts[:, a] - pts[:, b]) ** 2).sum(axis=1)
            w &= d2 > sigma * sigma
    clear = np.ones(samples, dtype=bool)
    for j in range(s):
        d2 = ((pts - fixed[j]) ** 2).sum(axis=2)
        clear &= np.all(d2 > sigma * sigma, axis=1)
    num = (w & clear).astype(float)
    den = w.astype(float)
    vals = np.empty(shards)
    block = samples // shards
    for q in range(shards):
        sl = slice(q * block, (q + 1) * block)
        d = den[sl].sum()
        vals[q] = num[sl].sum() / d if d > 0 else np.nan
    vals = vals[np.isfinite(vals)]
    k = float(num.sum() / den.sum())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return k, se


def brute_force_k1(model: HardSphereModel, pdf, r1, samples: int, seed: int,
                   shards: int = 16):
    """One-point special case of brute_force_ks."""
    return brute_force_ks(model, pdf, np.atleast_2d(np.asarray(r1, float)),
                          samples, seed, shards)


# ---------------------------------------------------------------------------
# s-point coefficients and pair structure


@dataclass
class PairOccupation:
    """s-point occupation estimates at a batch of position tuples."""

    points: list              # each entry an (s, 3) position stack
    ks_values: np.ndarray     # (len(points),)
    mc_error: np.ndarray      # (len(points),)
    s: int
    info: dict = dataclass_field(default_factory=dict)


def _containment_count(pts: np.ndarray, fixed: np.ndarray, sigma: float):
    """How many of the fixed exclusion balls contain each point."""
    d2 = ((pts[:, None, :] - fixed[None, :, :]) ** 2).sum(axis=2)
    return (d2 < sigma * sigma).sum(axis=1)


def estimate_ks(model: HardSphereModel, pdf, tuples, *, samples: int = 200_000,
                seed: int = 0, k1_field: OccupationField | None = None,
                shards: int = 16) -> PairOccupation:
    """Monte Carlo s-point occupation coefficients at position tuples.

    k_s(r_1..r_s) = (1 - v_union)^(N-s) with v_union the measure of the union
    of the s exclusion balls under the wall-conditioned one-body position law,
    reweighted by 1/k1 when a solved field is supplied (the self-consistent
    convention of solve_k1). The union is resolved by a ball-mixture
    importance proposal, so thin-shell tuples do not suffer Poisson noise.
    s = N returns exactly 1: no free spheres remain.
    """
    tuples = [np.atleast_2d(np.asarray(p, dtype=float)) for p in tuples]
    s = tuples[0].shape[0]
    if any(p.shape != (s, 3) for p in tuples):
        raise ValueError("all tuples must stack the same number of 3d points")
    n, sigma, box = model.n, model.sigma, model.box
    rest = n - s
    if rest < 0:
        raise ValueError(f"s={s} exceeds the particle count N={n}")
    m = len(tuples)
    if rest == 0 or sigma == 0.0:
        return PairOccupation(points=tuples, ks_values=np.ones(m),
                              mc_error=np.zeros(m), s=s,
                              info={"samples": 0, "seed": seed})

    beta = BALL_MIX_FRACTION
    bank_size = int(round((1.0 - beta) * samples))
    ball_per_tuple = int(round(bank_size * beta / (1.0 - beta)))
    bank_size -= bank_size % shards
    ball_per_tuple -= ball_per_tuple % shards
    if bank_size < shards or ball_per_tuple < shards:
        raise ValueError("samples too small for the shard count")
    rng_bank = derive_rng(seed, "occupation", "ks", "bank")
    bank, z_w, z_w_se = wall_conditioned_positions(pdf, model, bank_size,
                                                   rng_bank)
    bank_p = pdf.position_density(bank)
    index = _CellIndex(bank, cell=max(sigma, box / 64.0), box=box)
    shard_of = np.repeat(np.arange(shards), bank_size // shards)
    inv_k_bank = (np.ones(bank_size) if k1_field is None
                  else 1.0 / k1_field.interp(bank))
    den_per_shard = np.array([
        inv_k_bank[shard_of == q].mean() for q in range(shards)
    ])
    v_ball_vol = 4.0 / 3.0 * math.pi * sigma ** 3
    m_tot = bank_size // shards + ball_per_tuple // shards
    beta_eff = (ball_per_tuple // shards) / m_tot

    ks = np.empty(m)
    err = np.empty(m)
    for t_idx, fixed in enumerate(tuples):
        rng = derive_rng(seed, "occupation", "ks", "ball", t_idx)
        b_idx = rng.integers(s, size=ball_per_tuple)
        radius = sigma * np.cbrt(rng.random(ball_per_tuple))
        d = rng.normal(size=(ball_per_tuple, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = fixed[b_idx] + radius[:, None] * d
        cnt = _containment_count(pts, fixed, sigma)
        p_pts = pdf.position_density(pts)
        thw = wall_theta(pts, model).astype(float)
        inv_k_pts = (np.ones(ball_per_tuple) if k1_field is None
                     else 1.0 / k1_field.interp(pts))
        q_pts = ((1.0 - beta_eff) * p_pts * thw / z_w
                 + beta_eff * cnt / (s * v_ball_vol))
        contrib_ball = p_pts * thw * inv_k_pts / q_pts
        hit = [index.query_ball(fixed[b], sigma) for b in range(s)]
        hit_idx = (np.unique(np.concatenate(hit)) if any(h.size for h in hit)
                   else np.empty(0, dtype=np.intp))
        if hit_idx.size:
            cnt_h = _containment_count(bank[hit_idx], fixed, sigma)
            p_h = bank_p[hit_idx]
            q_h = ((1.0 - beta_eff) * p_h / z_w
                   + beta_eff * cnt_h / (s * v_ball_vol))
            contrib_hit = p_h * inv_k_bank[hit_idx] / q_h
            hit_shards = shard_of[hit_idx]
        else:
            contrib_hit = np.empty(0)
            hit_shards = np.empty(0, dtype=int)
        v_shards = np.empty(shards)
        block = ball_per_tuple // shards
        for q in range(shards):
            num = contrib_ball[q * block:(q + 1) * block].sum()
            if contrib_hit.size:
                num += contrib_hit[hit_shards == q].sum()
            v_shards[q] = num / m_tot / (z_w * den_per_shard[q])
        v_hat = float(np.clip(v_shards.mean(), 0.0, 1.0 - 1e-12))
        v_se = float(v_shards.std(ddof=1) / math.sqrt(shards))
        bank_q_share = float(
            ((1.0 - beta_eff) * p_pts * thw / z_w / q_pts).mean()
        )
        v_se = math.hypot(v_se, v_hat * (z_w_se / z_w) * abs(1.0 - bank_q_share))
        ks[t_idx] = (1.0 - v_hat) ** rest
        err[t_idx] = rest * (1.0 - v_hat) ** (rest - 1) * v_se
    return PairOccupation(
        points=tuples, ks_values=ks, mc_error=err, s=s,
        info={"samples": samples, "seed": seed, "shards": shards,
              "bank_size": bank_size, "ball_per_tuple": ball_per_tuple,
              "reweighted": k1_field is not None},
    )


def lens_volume(d: float, sigma: float) -> float:
    """Overlap volume of two radius-sigma balls with centers d apart."""
    if d >= 2.0 * sigma:
        return 0.0
    return math.pi / 12.0 * (4.0 * sigma + d) * (2.0 * sigma - d) ** 2


def ball_fraction_from_k1(field: OccupationField, r, n: int):
    """Invert k1 = (1 - v)^(N-1) for the exclusion-ball measure v."""
    k = np.clip(field.interp(r), 1e-300, 1.0)
    return 1.0 - k ** (1.0 / (n - 1))


@dataclass
class ContactOccupancy:
    """Two-point occupation evaluator built on a solved one-point field.

    k2(r1, r2) = (1 - v1 - v2 + lens)^(N-2): the two exclusion balls with
    their overlap counted once. Reproduces the closed uniform-density contact
    value (1 - 2.25 pi sigma^3 / wall_volume)^(N-2) in the bulk. mode
    "product" gives the k1(r1) k1(r2) factorization and "unit" the constant-1
    approximation.
    """

    model: HardSphereModel
    k1_field: OccupationField
    mode: str = "insertion"  # insertion | product | unit

    def k2(self, r1, r2):
        r1 = np.asarray(r1, dtype=float)
        r2 = np.asarray(r2, dtype=float)
        n, sigma = self.model.n, self.model.sigma
        if self.mode == "unit" or sigma == 0.0:
            return np.ones(np.broadcast_shapes(r1.shape, r2.shape)[:-1])
        if self.mode == "product":
            return self.k1_field.interp(r1) * self.k1_field.interp(r2)
        v1 = ball_fraction_from_k1(self.k1_field, r1, n)
        v2 = ball_fraction_from_k1(self.k1_field, r2, n)
        d = np.linalg.norm(r2 - r1, axis=-1)
        vball = 4.0 / 3.0 * math.pi * sigma ** 3
        lens = np.vectorize(lambda x: lens_volume(x, sigma))(d) / vball
        vmid = ball_fraction_from_k1(self.k1_field, 0.5 * (r1 + r2), n)
        vu = np.clip(v1 + v2 - lens * vmid, 0.0, 1.0 - 1e-12)
        return (1.0 - vu) ** (n - 2)

    def k2_contact(self, r1, n21):
        """k2 at exact contact: r2 = r1 + sigma * n21."""
        r1 = np.asarray(r1, dtype=float)
        n21 = np.asarray(n21, dtype=float)
        return self.k2(r1, r1 + self.model.sigma * n21)

    def g_contact(self, r1, n21):
        """Contact pair enhancement k2 / (k1(r1) k1(r2))."""
        r1 = np.asarray(r1, dtype=float)
        r2 = r1 + self.model.sigma * np.asarray(n21, dtype=float)
        return self.k2_contact(r1, n21) / (
            self.k1_field.interp(r1) * self.k1_field.interp(r2)
        )


def analytic_contact_k2_uniform(model: HardSphereModel) -> float:
    """Closed-form bulk contact k2 for a uniform position density."""
    union = 2.25 * math.pi * model.sigma ** 3
    return max(0.0, 1.0 - union / model.wall_volume) ** (model.n - 2)


def analytic_k1_uniform(model: HardSphereModel) -> float:
    """Closed-form bulk k1 for a uniform position density (unclipped ball)."""
    v = (4.0 / 3.0) * math.pi * model.sigma ** 3 / model.wall_volume
    return (1.0 - v) ** (model.n - 1)


# ---------------------------------------------------------------------------
# correlation defect


@dataclass
class CorrelationSample:
    """Factorization defect of the s-point density at fixed phase tuples."""

    phase_tuples: list        # each entry a tuple of PhasePoint
    delta_rho: np.ndarray
    mc_error: np.ndarray
    s: int
    info: dict = dataclass_field(default_factory=dict)


def correlation_delta(model: HardSphereModel, pdf,
                      k1_field: OccupationField, phase_tuples,
                      pair_occ: PairOccupation | None = None, *,
                      samples: int = 200_000, seed: int = 0,
                      t: float = 0.0) -> CorrelationSample:
    """Defect between the s-point density and its factorized part.

    delta = Theta_bar^(s) * prod_i rho_hat(x_i) * (k_s - 1), where
    rho_hat = p theta_w / Z1 is the occupation-stripped one-point density
    (Z1 = integral of p theta_w k1, so rho_hat = rho1 / k1). The same value
    equals the direct difference rho_s - Theta_bar^(s) prod rho_hat; both
    are computed and cross-checked. Point particles (sigma = 0) give exact
    zeros through k_s = 1.
    """
    tuples = [tuple(tp) for tp in phase_tuples]
    s = len(tuples[0])
    if any(len(tp) != s for tp in tuples):
        raise ValueError("all phase tuples must have the same length")
    positions = [np.stack([p.r for p in tp]) for tp in tuples]
    if pair_occ is None:
        pair_occ = estimate_ks(model, pdf, positions, samples=samples,
                               seed=seed, k1_field=k1_field)
    if pair_occ.s != s or len(pair_occ.points) != len(tuples):
        raise ValueError("pair_occ does not match the phase tuples")
    z1 = hat_normalization(model, pdf, k1_field)
    deltas = np.empty(len(tuples))
    errors = np.empty(len(tuples))
    for i, tp in enumerate(tuples):
        theta_bar = 1.0
        fac = 1.0
        for a, p in enumerate(tp):
            thw = float(wall_theta(p.r, model))
            theta_bar *= thw
            fac *= float(pdf.density(p.r, p.v, t)) * thw / z1
            for b in range(a):
                theta_bar *= float(pair_theta(p.r, tp[b].r, model.sigma))
        ks = float(pair_occ.ks_values[i])
        delta = theta_bar * fac * (ks - 1.0)
        direct = theta_bar * fac * ks - theta_bar * fac
        if abs(delta - direct) > 1e-12 * max(abs(theta_bar * fac * ks),
                                             abs(theta_bar * fac), 1e-300):
            raise AssertionError(
                "factored and direct defect forms disagree beyond roundoff")
        deltas[i] = delta
        errors[i] = theta_bar * fac * float(pair_occ.mc_error[i])
    return CorrelationSample(phase_tuples=tuples, delta_rho=deltas,
                             mc_error=errors, s=s,
                             info={"z1": z1, **pair_occ.info})


def contact_pair_tuples(model: HardSphereModel, pdf, count: int, seed: int,
                        separation_factor: float = 2.2,
                        clearance_factor: float = 3.0):
    """Random bulk phase-point pairs at fixed separation, for defect scans.

    Separations default to 2.2 sigma: beyond the exclusion-ball overlap
    (> 2 sigma) so the pair coefficient is lens-free, close enough to stay
    local. Velocities come from the pdf at each position. Pass the model
    with the largest sigma of a sequence and reuse the tuples so every
    entry sees the same (admissible) geometry.
    """
    from .geometry import PhasePoint

    rng = derive_rng(seed, "occupation", "tuples")
    sigma, box = model.sigma, model.box
    margin = max(clearance_factor * sigma, 0.05 * box)
    out = []
    while len(out) < count:
        r1 = rng.uniform(margin, box - margin, size=3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        r2 = r1 + separation_factor * sigma * d
        if np.all((r2 > margin) & (r2 < box - margin)):
            v1, v2 = pdf.sample_velocities(np.stack([r1, r2]), rng)
            out.append((PhasePoint(r1, v1), PhasePoint(r2, v2)))
    return out


# ---------------------------------------------------------------------------
# contact flux integral


@dataclass
class ContactIntegralReport:
    value: float
    error: float
    probe_velocity: np.ndarray
    details: dict = dataclass_field(default_factory=dict)


def l1_k1_contact_integral(pdf, pair_occ: ContactOccupancy,
                           model: HardSphereModel, r1, *, t: float = 0.0,
                           quad=None, probe_velocity=None) -> ContactIntegralReport:
    """Free-streaming derivative of k1 along a probe, as a contact flux.

    Transporting the occupation coefficient along a trajectory with velocity
    v1 picks up the net flux of conditional partner density through the
    contact sphere:

        value = -(N-1) sigma^2 * Int dOmega(n) [(v1 - u(r2)) . n]
                 * rho1(r2) * k2(r1, r2),   r2 = r1 + sigma n,

    with rho1 = p theta_w k1 / Z1 the one-point marginal (k1 from the field
    carried by pair_occ) and u the local drift of the partner law. The n-even
    part of the integrand cancels by parity, so the value scales with the
    density gradient times (N-1) sigma^3 and vanishes identically for a
    uniform bulk density.

    probe_velocity defaults to v_th (1,1,1)/sqrt(3); the value is linear in
    the probe, and a fixed unit-thermal probe keeps scans comparable across
    sequence entries.
    """
    from .quadrature import QuadratureSpec, sphere_grid

    if quad is None:
        quad = QuadratureSpec()
    r1 = np.asarray(r1, dtype=float)
    n_part, sigma = model.n, model.sigma
    v_th = float(getattr(pdf, "v_th", 1.0))
    v1 = (np.full(3, v_th / math.sqrt(3.0)) if probe_velocity is None
          else np.asarray(probe_velocity, dtype=float))
    if sigma == 0.0:
        return ContactIntegralReport(0.0, 0.0, v1,
                                     {"reason": "zero diameter"})
    k1_field = pair_occ.k1_field

    def evaluate(q):
        nodes, weights, _ = sphere_grid(q.angle_nodes)
        r2 = r1[None, :] + sigma * nodes
        z1 = hat_normalization(model, pdf, k1_field, q.position_nodes)
        rho1 = (pdf.position_density(r2, t) * (wall_theta(r2, model) > 0)
                * k1_field.interp(r2) / z1)
        u = np.stack([np.broadcast_to(pdf.drift(p, t), (3,)) for p in r2])
        flux = -((v1[None, :] - u) * nodes).sum(axis=1)
        k2 = pair_occ.k2_contact(r1, nodes)
        val = (n_part - 1) * sigma ** 2 * float(
            (weights * flux * rho1 * k2).sum())
        norm = (n_part - 1) * sigma ** 2 * float(
            (weights * np.abs(flux) * rho1 * k2).sum())
        return val, norm

    value, scale = evaluate(quad)
    coarse, _ = evaluate(quad.coarsened())
    error = abs(value - coarse) + 1e-13 * scale
    return ContactIntegralReport(value=value, error=error, probe_velocity=v1,
                                 details={"coarse": coarse,
                                          "integrand_norm": scale})
