"""Event-driven hard-sphere dynamics in a specular box.

All particles advance synchronously between events. Pair events use the
standard quadratic contact-time solution; wall events reflect one velocity
component on the planes sigma/2 and box - sigma/2 (center coordinates).
Scheduling is a binary heap with per-particle invalidation counters, and
simultaneous events (within 1e-12 box/v_th of each other) are executed in
ascending particle-index order so runs are bitwise deterministic.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .collision import elastic_map
from .geometry import HardSphereModel, NBodyConfig
from .occupation import lens_volume
from .quadrature import gauss_legendre, sphere_grid


# ---------------------------------------------------------------------------
# event prediction


@dataclass(frozen=True)
class Event:
    """A resolved event: the system state immediately before and after.

    kind "pair" carries the colliding indices (i < j_or_face) and the unit
    contact normal from i toward j; kind "wall" carries the particle index
    and the face index (axis*2, lower; axis*2+1, upper); kind "none" is the
    no-future-event sentinel: infinite time, states unchanged. x_minus and
    x_plus share one positions array; only velocities differ across a
    collision.
    """

    t: float
    kind: str                 # "pair", "wall", or "none"
    i: int
    j_or_face: int
    x_minus: NBodyConfig = None
    x_plus: NBodyConfig = None
    normal: np.ndarray = None

    @property
    def face_axis(self) -> int:
        return self.j_or_face // 2


def pair_collision_time(ri, vi, rj, vj, sigma: float):
    """Time until spheres i and j touch, or inf if they never do."""
    r = np.asarray(ri, float) - np.asarray(rj, float)
    v = np.asarray(vi, float) - np.asarray(vj, float)
    b = float(r @ v)
    if b >= 0.0:
        return math.inf
    v2 = float(v @ v)
    if v2 == 0.0:
        return math.inf
    disc = b * b - v2 * (float(r @ r) - sigma * sigma)
    if disc <= 0.0:
        return math.inf
    return (-b - math.sqrt(disc)) / v2


def _pair_times_against(positions, velocities, i, sigma):
    """Vectorized contact times of particle i against all others."""
    r = positions[i] - positions
    v = velocities[i] - velocities
    b = (r * v).sum(axis=1)
    v2 = (v * v).sum(axis=1)
    disc = b * b - v2 * ((r * r).sum(axis=1) - sigma * sigma)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-b - np.sqrt(disc)) / v2
    t[(b >= 0.0) | (disc <= 0.0) | (v2 == 0.0)] = math.inf
    t[i] = math.inf
    return t


def wall_times(r, v, model: HardSphereModel):
    """(time, face) of the next wall hit per axis for one particle."""
    lo, hi = model.wall_box
    out = []
    for a in range(3):
        if v[a] > 0.0:
            out.append(((hi - r[a]) / v[a], a * 2 + 1))
        elif v[a] < 0.0:
            out.append(((lo - r[a]) / v[a], a * 2))
    return out


def _resolve(config_pos, config_vel, model, t_abs, dt, kind, i, jf):
    """Build a resolved Event by streaming to t and applying the collision."""
    sigma = model.sigma
    p = config_pos + config_vel * dt
    v_minus = config_vel.copy()
    v_plus = config_vel.copy()
    normal = None
    if kind == "pair":
        d = p[jf] - p[i]
        dist = float(np.linalg.norm(d))
        normal = d / dist
        # project to exact contact, preserving the midpoint
        mid = 0.5 * (p[i] + p[jf])
        p[i] = mid - 0.5 * sigma * normal
        p[jf] = mid + 0.5 * sigma * normal
        v_plus[i], v_plus[jf] = elastic_map(v_minus[i], v_minus[jf], normal)
    else:
        axis, side = jf // 2, jf % 2
        lo, hi = model.wall_box
        p[i, axis] = hi if side else lo
        v_plus[i, axis] *= -1.0
    return Event(t=t_abs, kind=kind, i=i, j_or_face=jf,
                 x_minus=NBodyConfig(p, v_minus), x_plus=NBodyConfig(p, v_plus),
                 normal=normal)


def next_event(config: NBodyConfig, model: HardSphereModel,
               t_now: float = 0.0, v_th_ref: float = 1.0):
    """All soonest events from the given state, resolved.

    Returns every candidate within 1e-12 box/v_th of the earliest time,
    sorted by (i, j_or_face) -- the deterministic execution order -- each
    with x_minus (all particles streamed to the event time) and x_plus (the
    event's own collision applied). With no finite candidate the list holds
    a single "none" sentinel at infinite time.
    """
    pos, vel = config.positions, config.velocities
    sigma = model.sigma
    cands = []
    for i in range(config.n):
        tp = _pair_times_against(pos, vel, i, sigma)
        for j in np.nonzero(np.isfinite(tp))[0]:
            if int(j) > i:
                cands.append((float(tp[j]), "pair", i, int(j)))
        for dt, face in wall_times(pos[i], vel[i], model):
            cands.append((dt, "wall", i, face))
    if not cands:
        return [Event(t=math.inf, kind="none", i=-1, j_or_face=-1,
                      x_minus=config, x_plus=config)]
    t_min = min(c[0] for c in cands)
    tie_tol = 1e-12 * model.box / max(v_th_ref, 1e-300)
    tied = sorted((c for c in cands if c[0] <= t_min + tie_tol),
                  key=lambda c: (c[2], c[3], c[0]))
    return [_resolve(pos, vel, model, t_now + dt, dt, kind, i, jf)
            for dt, kind, i, jf in tied]


# ---------------------------------------------------------------------------
# the simulator


@dataclass
class Trajectory:
    model: HardSphereModel
    config: NBodyConfig       # final state
    t_final: float
    n_pair: int
    n_wall: int
    event_rows: list          # [t, kind, i, j_or_face, dKE, dPx, dPy, dPz]
    records: list             # resolved pair Events, capped at record_cap
    snapshots: list           # (t, positions, velocities)
    audits: dict

    def event_csv_rows(self):
        return [list(r) for r in self.event_rows]

    def to_event_csv(self, path):
        from .runio import write_csv

        write_csv(path, ["t", "kind", "i", "j_or_face", "KE_delta",
                         "Px_delta", "Py_delta", "Pz_delta"],
                  self.event_csv_rows())


def run(model: HardSphereModel, config: NBodyConfig, *, t_end: float = None,
        max_events: int = None, snapshot_times=None, record_cap: int = 1000,
        audit_every: int = 1, v_th_ref: float = 1.0,
        keep_event_rows: bool = True) -> Trajectory:
    """Advance the configuration by event-driven dynamics.

    Stops at t_end, after max_events, or both (first reached). Snapshot
    times must be ascending. Audits: exact-contact residual at every pair
    event, monotone event times, and full ensemble admissibility every
    audit_every events (default: after every event) and at the end. The
    first record_cap pair events are kept as resolved Events for boundary-
    condition evaluation.
    """
    if t_end is None and max_events is None:
        raise ValueError("need t_end and/or max_events")
    pos = config.positions.copy()
    vel = config.velocities.copy()
    n, sigma = model.n, model.sigma
    tie_tol = 1e-12 * model.box / max(v_th_ref, 1e-300)
    lo, hi = model.wall_box

    counters = np.zeros(n, dtype=np.int64)
    heap = []
    seq = 0

    def schedule(i, t_now):
        nonlocal seq
        t = _pair_times_against(pos, vel, i, sigma)
        for j in np.nonzero(np.isfinite(t))[0]:
            a, b = (i, int(j)) if i < j else (int(j), i)
            heapq.heappush(heap, (t_now + float(t[j]), seq, "pair", a, b,
                                  counters[a], counters[b]))
            seq += 1
        for dt, face in wall_times(pos[i], vel[i], model):
            heapq.heappush(heap, (t_now + dt, seq, "wall", i, face,
                                  counters[i], -1))
            seq += 1

    t = 0.0
    for i in range(n):
        # schedule() would double-insert pairs; seed walls here and pairs once
        for dt, face in wall_times(pos[i], vel[i], model):
            heapq.heappush(heap, (t + dt, seq, "wall", i, face, counters[i], -1))
            seq += 1
    for i in range(n):
        ti = _pair_times_against(pos, vel, i, sigma)
        for j in np.nonzero(np.isfinite(ti))[0]:
            if int(j) > i:
                heapq.heappush(heap, (t + float(ti[j]), seq, "pair", i, int(j),
                                      counters[i], counters[j]))
                seq += 1

    def valid(entry):
        _, _, kind, i, j, ci, cj = entry
        if counters[i] != ci:
            return False
        return kind == "wall" or counters[j] == cj

    snapshot_times = list(snapshot_times) if snapshot_times is not None else []
    snap_idx = 0
    snapshots = []
    event_rows = []
    records = []
    n_pair = n_wall = 0
    max_contact_residual = 0.0
    max_pair_gap = 0.0  # worst admissibility defect seen (negative is overlap)
    events_done = 0

    def take_snapshots(up_to):
        nonlocal snap_idx
        while snap_idx < len(snapshot_times) and snapshot_times[snap_idx] <= up_to:
            ts = snapshot_times[snap_idx]
            snapshots.append((ts, pos + vel * (ts - t), vel.copy()))
            snap_idx += 1

    def full_audit():
        nonlocal max_pair_gap
        d = pos[:, None, :] - pos[None, :, :]
        d2 = (d * d).sum(axis=-1)
        iu = np.triu_indices(n, k=1)
        gap = np.sqrt(d2[iu]).min() - sigma
        max_pair_gap = min(max_pair_gap, float(gap))
        if gap < -1e-9 * sigma:
            raise RuntimeError(f"overlap detected: pair gap {gap:.3e}")
        if np.any(pos < lo - 1e-9 * sigma) or np.any(pos > hi + 1e-9 * sigma):
            raise RuntimeError("wall clearance violated")

    compact_at = max(200_000, 30 * n * n)
    while True:
        if max_events is not None and events_done >= max_events:
            break
        if len(heap) > compact_at:
            heap = [e for e in heap if valid(e)]
            heapq.heapify(heap)
        # pull the earliest valid event, honoring the tie rule
        entry = None
        while heap:
            cand = heapq.heappop(heap)
            if valid(cand):
                entry = cand
                break
        if entry is None:
            raise RuntimeError("event queue exhausted")
        t_ev = entry[0]
        if t_end is not None and t_ev > t_end:
            heapq.heappush(heap, entry)
            break
        # collect near-simultaneous valid events, execute the lowest-index one
        buffer = [entry]
        while heap and heap[0][0] <= t_ev + tie_tol:
            cand = heapq.heappop(heap)
            if valid(cand):
                buffer.append(cand)
        buffer.sort(key=lambda e: (e[3], e[4], e[0]))
        chosen = buffer.pop(0)
        for e in buffer:
            heapq.heappush(heap, e)
        t_new, _, kind, i, j_or_face, _, _ = chosen
        if t_new < t - tie_tol:
            raise RuntimeError(
                f"event time regression: {t_new} after {t}")

        take_snapshots(min(t_new, t_end) if t_end is not None else t_new)
        pos += vel * (t_new - t)
        t = t_new

        ke_before = 0.5 * float((vel * vel).sum())
        p_before = vel.sum(axis=0)
        if kind == "pair":
            j = j_or_face
            d = pos[j] - pos[i]
            dist = float(np.linalg.norm(d))
            max_contact_residual = max(max_contact_residual,
                                       abs(dist - sigma))
            if abs(dist - sigma) > 1e-8 * sigma:
                raise RuntimeError(
                    f"contact residual {abs(dist - sigma):.3e} too large")
            nhat = d / dist
            # project to exact contact, preserving the midpoint
            mid = 0.5 * (pos[i] + pos[j])
            pos[i] = mid - 0.5 * sigma * nhat
            pos[j] = mid + 0.5 * sigma * nhat
            if record_cap and len(records) < record_cap:
                v_in = vel.copy()
            vi_new, vj_new = elastic_map(vel[i], vel[j], nhat)
            vel[i] = vi_new
            vel[j] = vj_new
            counters[i] += 1
            counters[j] += 1
            if record_cap and len(records) <= record_cap - 1:
                contact = pos.copy()
                records.append(Event(
                    t=t, kind="pair", i=i, j_or_face=j,
                    x_minus=NBodyConfig(contact, v_in),
                    x_plus=NBodyConfig(contact, vel.copy()),
                    normal=nhat.copy()))
            n_pair += 1
            schedule(i, t)
            schedule(j, t)
            touched = (i, j)
        else:
            axis = j_or_face // 2
            side = j_or_face % 2
            pos[i][axis] = hi if side else lo
            vel[i][axis] *= -1.0
            counters[i] += 1
            n_wall += 1
            schedule(i, t)
            touched = (i,)
        events_done += 1

        if keep_event_rows:
            ke_after = 0.5 * float((vel * vel).sum())
            dp = vel.sum(axis=0) - p_before
            event_rows.append([t, kind, i, j_or_face, ke_after - ke_before,
                               float(dp[0]), float(dp[1]), float(dp[2])])
        # local admissibility of the touched particles
        for a in touched:
            d2 = ((pos - pos[a]) ** 2).sum(axis=1)
            d2[a] = math.inf
            gap = math.sqrt(float(d2.min())) - sigma
            max_pair_gap = min(max_pair_gap, gap)
            if gap < -1e-9 * sigma:
                raise RuntimeError(f"overlap after event at particle {a}")
        if audit_every and events_done % audit_every == 0:
            full_audit()

    if t_end is not None and t < t_end:
        take_snapshots(t_end)
        pos += vel * (t_end - t)
        t = t_end
    full_audit()
    return Trajectory(
        model=model, config=NBodyConfig(pos, vel), t_final=t,
        n_pair=n_pair, n_wall=n_wall, event_rows=event_rows,
        records=records, snapshots=snapshots,
        audits={
            "max_contact_residual": max_contact_residual,
            "worst_pair_gap": max_pair_gap,
            "events": events_done,
        },
    )


# ---------------------------------------------------------------------------
# measurement


@dataclass(frozen=True)
class MeasureSpec:
    vel_bins: int = 24        # 1-d marginal histogram bins (entropy trace)
    windows: int = 10
    pos_bins: int = 3         # per axis, for the 6-d phase histogram
    pdf_vel_bins: int = 6     # per axis, for the 6-d phase histogram
    shell_eta: float = 0.05   # near-contact shell [sigma, sigma(1+eta)]
    min_bin_count: int = 5    # cells below this count as under-populated


@dataclass
class Observables:
    temperature: float
    axis_second_moments: np.ndarray
    speed4_ratio: float            # <|v|^4> / <|v|^2>^2, Maxwell: 5/3
    pair_rate_per_particle: float
    wall_rate_per_particle: float
    window_times: np.ndarray
    window_entropy: np.ndarray
    entropy_slope: float
    entropy_slope_stderr: float
    velocity_histograms: dict
    shell_counts: np.ndarray       # per-snapshot pair counts in the shell
    shell_mean: float
    shell_se: float
    tabulated: object              # TabulatedPdf on the pooled snapshots
    underpopulated_fraction: float
    flags: list


def measure(traj: Trajectory, spec: MeasureSpec = None) -> Observables:
    """Time-averaged moments, rates, entropy trace, and density estimates.

    Entropy per window is the sum of the three one-dimensional velocity
    marginal entropies from fixed-bin histograms over the window's
    snapshots; the histogram bias is common to all windows, so the trace
    tests constancy, not the absolute value. The 6-d phase histogram is
    exported as a TabulatedPdf over cell centers; cells holding fewer than
    min_bin_count samples are reported through underpopulated_fraction and a
    flag instead of passing silently as noise. Shell counts are pairs with
    separation in [sigma, sigma(1+eta)] per snapshot; their stderr treats
    snapshots as independent, which holds when the snapshot spacing exceeds
    the collision time.
    """
    if spec is None:
        spec = MeasureSpec()
    snaps = traj.snapshots
    if len(snaps) < max(spec.windows, 2):
        raise ValueError("not enough snapshots for the requested windows")
    vel_all = np.concatenate([v for (_, _, v) in snaps], axis=0)
    pos_all = np.concatenate([p for (_, p, _) in snaps], axis=0)
    t_axis = np.array([s[0] for s in snaps])
    temperature = float((vel_all ** 2).sum() / (3 * vel_all.shape[0]))
    axis_m2 = (vel_all ** 2).mean(axis=0)
    sp2 = (vel_all ** 2).sum(axis=1)
    speed4_ratio = float((sp2 ** 2).mean() / sp2.mean() ** 2)
    duration = traj.t_final
    n = traj.model.n
    pair_rate = 2.0 * traj.n_pair / duration / n
    wall_rate = traj.n_wall / duration / n

    vmax = float(np.abs(vel_all).max()) * 1.0001
    edges = np.linspace(-vmax, vmax, spec.vel_bins + 1)
    width = edges[1] - edges[0]
    per_window = np.array_split(np.arange(len(snaps)), spec.windows)
    w_times = []
    w_entropy = []
    for idx in per_window:
        vv = np.concatenate([snaps[k][2] for k in idx], axis=0)
        s = 0.0
        for a in range(3):
            h, _ = np.histogram(vv[:, a], bins=edges)
            p = h / h.sum() / width
            mask = p > 0
            s += -float((p[mask] * np.log(p[mask])).sum() * width)
        w_entropy.append(s)
        w_times.append(float(t_axis[idx].mean()))
    w_times = np.array(w_times)
    w_entropy = np.array(w_entropy)
    x = w_times - w_times.mean()
    slope = float((x * (w_entropy - w_entropy.mean())).sum() / (x * x).sum())
    resid = w_entropy - w_entropy.mean() - slope * x
    dof = max(len(w_times) - 2, 1)
    slope_se = float(math.sqrt((resid ** 2).sum() / dof / (x * x).sum()))
    hists = {}
    for a, name in enumerate(("vx", "vy", "vz")):
        h, _ = np.histogram(vel_all[:, a], bins=edges)
        hists[name] = (edges.copy(), h)

    # near-contact shell occupancy
    sigma = traj.model.sigma
    shell_hi = sigma * (1.0 + spec.shell_eta)
    iu = np.triu_indices(n, k=1)
    counts = []
    for (_, p, _) in snaps:
        d = p[:, None, :] - p[None, :, :]
        dd = np.sqrt((d * d).sum(axis=-1)[iu])
        counts.append(int(((dd >= sigma) & (dd <= shell_hi)).sum()))
    shell_counts = np.array(counts, dtype=float)
    shell_mean = float(shell_counts.mean())
    shell_se = float(shell_counts.std(ddof=1) / math.sqrt(len(counts))
                     if len(counts) > 1 else 0.0)

    # 6-d phase histogram exported as a tabulated density
    from .pdfs import TabulatedPdf

    box = traj.model.box
    pos_edges = np.linspace(0.0, box, spec.pos_bins + 1)
    vel_edges6 = np.linspace(-vmax, vmax, spec.pdf_vel_bins + 1)
    sample6 = np.concatenate([pos_all, vel_all], axis=1)
    hist, _ = np.histogramdd(sample6, bins=[pos_edges] * 3 + [vel_edges6] * 3)
    total = hist.sum()
    cell_vol = ((box / spec.pos_bins) ** 3
                * (2.0 * vmax / spec.pdf_vel_bins) ** 3)
    values = hist / total / cell_vol
    pos_centers = 0.5 * (pos_edges[1:] + pos_edges[:-1])
    vel_centers = 0.5 * (vel_edges6[1:] + vel_edges6[:-1])
    tabulated = TabulatedPdf([pos_centers] * 3, [vel_centers] * 3, values,
                             box=box, v_th=math.sqrt(temperature))
    under = float((hist < spec.min_bin_count).mean())
    flags = []
    if under > 0.2:
        flags.append(
            f"phase histogram under-populated: {under:.0%} of cells hold "
            f"fewer than {spec.min_bin_count} samples; coarsen the bins or "
            "pool more snapshots before trusting tabulated densities")
    return Observables(
        temperature=temperature, axis_second_moments=axis_m2,
        speed4_ratio=speed4_ratio, pair_rate_per_particle=pair_rate,
        wall_rate_per_particle=wall_rate, window_times=w_times,
        window_entropy=w_entropy, entropy_slope=slope,
        entropy_slope_stderr=slope_se, velocity_histograms=hists,
        shell_counts=shell_counts, shell_mean=shell_mean, shell_se=shell_se,
        tabulated=tabulated, underpopulated_fraction=under, flags=flags,
    )


# ---------------------------------------------------------------------------
# equilibrium rate predictions


def _sphere_qbar(model: HardSphereModel, angle_nodes: int = 302):
    """Orientation-averaged wall-clipping factor for a pair at offset r.

    qbar(r) = <prod_a (1 - min(r |n_a| / ell, 1))> over directions n: the
    fraction of the one-particle wall box available to a partner displaced
    by r n, with ell = box - sigma. Returns a vectorized callable of r.
    """
    nodes, weights, _ = sphere_grid(angle_nodes)
    absn = np.abs(nodes)
    wsum = float(weights.sum())
    ell = model.box - model.sigma

    def qbar(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        f = 1.0 - np.minimum(r[:, None, None] * absn[None, :, :] / ell, 1.0)
        return (weights[None, :] * f.prod(axis=2)).sum(axis=1) / wsum

    return qbar


def _k2_lens_profile(model: HardSphereModel, k2_contact=None, kbar2=None):
    """k2 as a function of pair separation, pinned at both ends.

    ln k2 is linear in the exclusion-lens volume, exact to second order in
    the packing fraction; the separated value kbar2 and the contact value
    default to the closed uniform forms and accept measured overrides.
    """
    n, sigma = model.n, model.sigma
    vw = model.wall_volume
    vball = 4.0 / 3.0 * math.pi * sigma ** 3
    if kbar2 is None:
        kbar2 = max(0.0, 1.0 - 2.0 * vball / vw) ** (n - 2)
    if k2_contact is None:
        k2_contact = max(0.0, 1.0 - 2.25 * math.pi * sigma ** 3 / vw) ** (n - 2)
    lens_c = lens_volume(sigma, sigma)
    log_far, log_c = math.log(kbar2), math.log(k2_contact)

    def k2(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        frac = np.array([lens_volume(x, sigma) for x in r]) / lens_c
        return np.exp(log_far + (log_c - log_far) * frac)

    return k2, float(k2_contact), float(kbar2)


def _pair_law_normalization(model, qbar, k2f, kbar2, radial_nodes: int):
    """E[theta_pair * k2] over wall-box uniform pairs, and P(overlap)."""
    sigma = model.sigma
    vw = model.wall_volume
    r_in, w_in = gauss_legendre(radial_nodes, 0.0, sigma)
    p_overlap = 4.0 * math.pi / vw * float(
        (w_in * r_in ** 2 * qbar(r_in)).sum())
    r_lens, w_lens = gauss_legendre(radial_nodes, sigma, 2.0 * sigma)
    lens_corr = 4.0 * math.pi / vw * float(
        (w_lens * r_lens ** 2 * qbar(r_lens) * (k2f(r_lens) - kbar2)).sum())
    return kbar2 * (1.0 - p_overlap) + lens_corr, p_overlap


def enskog_frequency_prediction(model: HardSphereModel, T: float = 1.0,
                                angle_nodes: int = 302,
                                radial_nodes: int = 24,
                                k2_contact=None, kbar2=None) -> dict:
    """Per-particle pair collision frequency of the equilibrium gas.

    nu = (N-1) * 4 sigma^2 sqrt(pi T) * qbar(sigma) k2(sigma) / (Vw * den):
    the dilute rate corrected by the wall-clipped contact-pair volume
    (qbar), the occupation of the other N-2 spheres at contact, and the
    admissibility normalization den = E[theta_pair k2] of the pair position
    law. k2_contact and kbar2 default to the closed uniform expressions and
    accept Monte Carlo estimates as overrides.
    """
    n, sigma = model.n, model.sigma
    vw = model.wall_volume
    qbar = _sphere_qbar(model, angle_nodes)
    k2f, k2c, kb2 = _k2_lens_profile(model, k2_contact, kbar2)
    den, p_overlap = _pair_law_normalization(model, qbar, k2f, kb2,
                                             radial_nodes)
    q_c = float(qbar(sigma)[0])
    nu = ((n - 1) * 4.0 * sigma ** 2 * math.sqrt(math.pi * T)
          * q_c * k2c / (vw * den))
    vbar = 4.0 / 3.0 * math.pi * sigma ** 3 / vw
    k1 = (1.0 - vbar) ** (n - 1)
    return {
        "nu_per_particle": nu,
        "total_pair_rate": 0.5 * n * nu,
        "qbar_contact": q_c, "p_overlap": p_overlap, "den": den,
        "k1_bulk": k1, "k2_contact": k2c, "kbar2": kb2,
        "g_contact": k2c / (k1 * k1),
    }


def near_contact_pair_prediction(model: HardSphereModel, eta: float = 0.05,
                                 angle_nodes: int = 302,
                                 radial_nodes: int = 16,
                                 k2_contact=None, kbar2=None):
    """Expected pairs per snapshot with separation in [sigma, sigma(1+eta)].

    count = C(N,2) * Num / Den with Num the shell mass of the pair position
    law (wall clipping via qbar, occupation via the lens-interpolated k2
    profile) and Den its admissible normalization. Returns (value, error,
    details); the error is a nested-rule estimate from coarsened node
    counts.
    """
    n, sigma = model.n, model.sigma
    vw = model.wall_volume

    def evaluate(a_nodes, r_nodes):
        qbar = _sphere_qbar(model, a_nodes)
        k2f, k2c, kb2 = _k2_lens_profile(model, k2_contact, kbar2)
        r_sh, w_sh = gauss_legendre(r_nodes, sigma, sigma * (1.0 + eta))
        num = 4.0 * math.pi / vw * float(
            (w_sh * r_sh ** 2 * qbar(r_sh) * k2f(r_sh)).sum())
        den, _ = _pair_law_normalization(model, qbar, k2f, kb2, radial_nodes)
        return n * (n - 1) / 2.0 * num / den

    value = evaluate(angle_nodes, radial_nodes)
    coarse = evaluate(max(8, (2 * angle_nodes) // 3),
                      max(4, (2 * radial_nodes) // 3))
    error = abs(value - coarse) + 1e-12 * abs(value)
    return value, error, {"eta": eta, "coarse": coarse}


def wall_rate_prediction(model: HardSphereModel, T: float = 1.0) -> float:
    """Per-particle wall-hit frequency: 3 <|v_axis|> / (box - sigma)."""
    return 3.0 * math.sqrt(2.0 * T / math.pi) / (model.box - model.sigma)


# ---------------------------------------------------------------------------
# collision boundary conditions


@dataclass
class FactorizedNBodyForm:
    """Product closure form: position profile x anisotropic Maxwell x theta.

    axis_temps breaks velocity isotropy so that re-evaluating the form after
    the elastic map gives a genuinely different value on non-grazing events.
    Calling the form on a configuration returns the plain density value;
    inadmissible states (beyond a contact tolerance of 1e-9 sigma) give 0,
    log_value returns -inf there.
    """

    model: HardSphereModel
    axis_temps: tuple = (1.0, 1.2, 0.8)
    drift: tuple = (0.0, 0.0, 0.0)
    position_profile: object = None   # OneBodyPdf or None for uniform

    def log_value(self, positions, velocities) -> float:
        m = self.model
        pos = np.asarray(positions, float)
        vel = np.asarray(velocities, float)
        sigma = m.sigma
        tol = 1e-9 * sigma
        lo, hi = m.wall_box
        if np.any(pos < lo - tol) or np.any(pos > hi + tol):
            return -math.inf
        d = pos[:, None, :] - pos[None, :, :]
        d2 = (d * d).sum(axis=-1)
        iu = np.triu_indices(m.n, k=1)
        if np.any(d2[iu] < (sigma - tol) ** 2):
            return -math.inf
        if self.position_profile is None:
            log_pos = -m.n * 3.0 * math.log(m.box)
        else:
            vals = self.position_profile.position_density(pos)
            if np.any(vals <= 0):
                return -math.inf
            log_pos = float(np.log(vals).sum())
        temps = np.asarray(self.axis_temps, float)
        u = np.asarray(self.drift, float)
        w = vel - u
        log_vel = float(
            (-0.5 * (w ** 2 / temps) - 0.5 * np.log(2 * math.pi * temps)).sum()
        )
        return log_pos + log_vel

    def __call__(self, config: NBodyConfig, t: float = 0.0) -> float:
        lv = self.log_value(config.positions, config.velocities)
        return 0.0 if lv == -math.inf else math.exp(lv)


def cbc_evaluate(event: Event, form, mode: str):
    """Boundary-condition values (incoming, outgoing) at one pair event.

    mode "pdf_conserving": the value is transported through the collision
    unchanged, outgoing = incoming = form(x_minus). mode "mcbc": the
    outgoing value is the closure form re-evaluated at the post-collisional
    state, outgoing = form(x_plus).
    """
    if event.kind != "pair":
        raise ValueError(f"boundary conditions apply to pair events, "
                         f"got {event.kind!r}")
    if mode not in ("pdf_conserving", "mcbc"):
        raise ValueError(f"unknown mode {mode!r}")
    incoming = form(event.x_minus, event.t)
    outgoing = incoming if mode == "pdf_conserving" else form(event.x_plus,
                                                              event.t)
    return incoming, outgoing


def is_grazing(event: Event, tol: float = 1e-8) -> bool:
    """True when the normal relative speed is negligible against |g|."""
    v = event.x_minus.velocities
    g = v[event.i] - v[event.j_or_face]
    gn = float(g @ event.normal)
    return abs(gn) <= tol * max(float(np.linalg.norm(g)), 1e-300)


def cbc_scan(events, form, mode: str, graze_tol: float = 1e-8):
    """Batch cbc_evaluate: arrays (incoming, outgoing, grazing)."""
    incoming = np.empty(len(events))
    outgoing = np.empty(len(events))
    grazing = np.empty(len(events), dtype=bool)
    for k, ev in enumerate(events):
        incoming[k], outgoing[k] = cbc_evaluate(ev, form, mode)
        grazing[k] = is_grazing(ev, graze_tol)
    return incoming, outgoing, grazing
