"""Scaled-sequence studies: grow N while holding N sigma^2 fixed.

Along such a sequence the free path stays of order the box while the packing
fraction and all occupation corrections shrink; the small parameter is
epsilon = 1/N. Every sweep here runs one metric over the sequence with common
random numbers per entry and returns the per-entry values together with a
weighted log-log rate fit, so "the correction vanishes like epsilon^q" is an
output, not an assumption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .geometry import HardSphereModel, PhasePoint
from .occupation import (
    ContactOccupancy,
    brute_force_ks,
    contact_pair_tuples,
    correlation_delta,
    estimate_ks,
    hat_normalization,
    l1_k1_contact_integral,
    solve_k1,
)
from .quadrature import QuadratureSpec
from .seeding import derive_child_seed, derive_rng


# ---------------------------------------------------------------------------
# the sequence


@dataclass(frozen=True)
class SequenceEntry:
    n: int
    sigma: float
    epsilon: float
    model: HardSphereModel


@dataclass(frozen=True)
class EpsilonSequence:
    c: float                  # the held product N sigma^2
    box: float
    entries: tuple

    def epsilons(self):
        return np.array([e.epsilon for e in self.entries])


def build_sequence(c: float, box: float, ns) -> EpsilonSequence:
    """Sequence of models with N sigma^2 = c, epsilon = 1/N.

    Rejects diameters at or beyond half the box (the geometry cannot hold a
    sphere) and verifies the held product to 1e-12 relative.
    """
    if c <= 0 or box <= 0:
        raise ValueError("c and box must be positive")
    ns = [int(n) for n in ns]
    if sorted(set(ns)) != ns:
        raise ValueError("particle counts must be strictly increasing")
    entries = []
    for n in ns:
        if n < 2:
            raise ValueError("need at least two particles per entry")
        sigma = math.sqrt(c / n)
        if sigma >= box / 2:
            raise ValueError(
                f"N={n} gives sigma={sigma:.4g} >= box/2; increase N or "
                "shrink c")
        if abs(n * sigma ** 2 - c) > 1e-12 * c:
            raise ValueError(f"held product drifted at N={n}")
        entries.append(SequenceEntry(
            n=n, sigma=sigma, epsilon=1.0 / n,
            model=HardSphereModel(n=n, sigma=sigma, box=box)))
    return EpsilonSequence(c=c, box=box, entries=tuple(entries))


# ---------------------------------------------------------------------------
# rate fitting


@dataclass
class RateFit:
    slope: float
    stderr: float
    intercept: float
    used: np.ndarray          # bool mask over the input rows
    residuals: np.ndarray     # log-space residuals of the used rows
    info: dict = dataclass_field(default_factory=dict)

    def slope_band(self, width: float = 2.0):
        return self.slope - width * self.stderr, self.slope + width * self.stderr


def fit_rate(epsilons, values, errors=None, *, min_points: int = 4,
             resolution_factor: float = 3.0) -> RateFit:
    """Weighted least-squares power-law fit ln(value) = q ln(eps) + b.

    Rows whose value is not resolved against its own error bar (value <
    resolution_factor * error) carry no rate information and are dropped;
    fewer than min_points resolved rows is an error, not a fit. Weights are
    inverse variances of ln(value); with no errors given the fit is ordinary
    least squares and the stderr comes from the residual scatter.
    """
    eps = np.asarray(epsilons, dtype=float)
    val = np.asarray(values, dtype=float)
    err = (np.zeros_like(val) if errors is None
           else np.asarray(errors, dtype=float))
    if eps.shape != val.shape or err.shape != val.shape:
        raise ValueError("epsilons, values, errors must share one shape")
    used = (val > 0) & (val >= resolution_factor * err) & (eps > 0)
    if used.sum() < min_points:
        raise ValueError(
            f"only {int(used.sum())} of {len(val)} rows are resolved "
            f"(value >= {resolution_factor} x error); need {min_points}")
    x = np.log(eps[used])
    y = np.log(val[used])
    rel = err[used] / val[used]
    if np.all(rel == 0.0):
        w = np.ones_like(y)
        scatter_only = True
    else:
        w = 1.0 / np.maximum(rel, 1e-12) ** 2
        scatter_only = False
    sw = w.sum()
    xb = (w * x).sum() / sw
    yb = (w * y).sum() / sw
    sxx = (w * (x - xb) ** 2).sum()
    slope = float((w * (x - xb) * (y - yb)).sum() / sxx)
    intercept = float(yb - slope * xb)
    resid = y - (intercept + slope * x)
    dof = max(int(used.sum()) - 2, 1)
    # scale the formal stderr by the reduced chi-square when the scatter
    # exceeds the quoted errors, so underestimated bars cannot fake precision
    chi2 = float((w * resid ** 2).sum())
    scale = max(chi2 / dof, 1.0) if not scatter_only else chi2 / dof
    stderr = float(math.sqrt(scale / sxx))
    return RateFit(slope=slope, stderr=stderr, intercept=intercept,
                   used=used, residuals=resid,
                   info={"chi2": chi2, "dof": dof,
                         "scatter_only": scatter_only})


# ---------------------------------------------------------------------------
# reports


@dataclass
class ConvergenceReport:
    metric_name: str
    entries: list             # dict rows: n, epsilon, sigma, value, error, ...
    fit: RateFit | None
    decreasing: bool
    info: dict = dataclass_field(default_factory=dict)

    def values(self):
        return np.array([row["value"] for row in self.entries])

    def errors(self):
        return np.array([row["error"] for row in self.entries])

    def to_dict(self) -> dict:
        out = {
            "metric": self.metric_name,
            "entries": self.entries,
            "decreasing": self.decreasing,
            "info": self.info,
        }
        if self.fit is not None:
            out["fit"] = {
                "slope": self.fit.slope,
                "stderr": self.fit.stderr,
                "intercept": self.fit.intercept,
                "used": [bool(u) for u in self.fit.used],
                "residuals": [float(r) for r in self.fit.residuals],
                "info": self.fit.info,
            }
        return out


def _strictly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


# ---------------------------------------------------------------------------
# sweeps


def sweep_k1(c: float, box: float, ns, *, pdf=None, grid_nodes: int = 8,
             samples_per_node: int = 1_000_000, seed: int = 0,
             fit: bool = True) -> ConvergenceReport:
    """Sup-node deviation of the one-point occupation field over the sequence.

    Per entry: solve the self-consistent field on the pinned grid and record
    sup over grid nodes of |k1 - 1| with the Monte Carlo error at the
    extremal node. The deviation is largest in the bulk, so the sup doubles
    as the bulk occupation correction.
    """
    if pdf is None:
        from .pdfs import UniformMaxwellian

        pdf = UniformMaxwellian(box=box)
    seq = build_sequence(c, box, ns)
    rows = []
    for entry in seq.entries:
        field = solve_k1(entry.model, pdf, grid_nodes=grid_nodes,
                         samples_per_node=samples_per_node,
                         seed=derive_child_seed(seed, "bg", "k1", entry.n))
        dev = np.abs(field.values - 1.0)
        idx = np.unravel_index(int(np.argmax(dev)), dev.shape)
        rows.append({
            "n": entry.n, "epsilon": entry.epsilon, "sigma": entry.sigma,
            "value": float(dev[idx]), "error": float(field.stderr[idx]),
            "iterations": field.info.get("iterations"),
        })
    values = [r["value"] for r in rows]
    fit_result = fit_rate(seq.epsilons(), values,
                          [r["error"] for r in rows]) if fit else None
    return ConvergenceReport(
        metric_name="sup_node_abs_k1_minus_1", entries=rows, fit=fit_result,
        decreasing=_strictly_decreasing(values),
        info={"c": c, "box": box, "grid_nodes": grid_nodes,
              "samples_per_node": samples_per_node, "seed": seed,
              "pdf": type(pdf).__name__})


def bulk_phase_probes(model: HardSphereModel, pdf, count: int, seed: int,
                      clearance_factor: float = 1.5):
    """Fixed (r, v) probes clear of the walls, shared across a sequence.

    Positions are uniform on the box shrunk by clearance_factor * sigma per
    face (pass the largest-sigma model of the sequence so the same probes
    stay in the bulk of every entry); velocities come from the pdf.
    """
    rng = derive_rng(seed, "bg", "probes")
    margin = max(clearance_factor * model.sigma, 0.02 * model.box)
    r = rng.uniform(margin, model.box - margin, size=(count, 3))
    v = pdf.sample_velocities(r, rng)
    return [(r[i], v[i]) for i in range(count)]


def sweep_operators(c: float, box: float, ns, pdf, *, quad=None,
                    probes: int = 12, seed: int = 0,
                    rho2_form: str = "pair_over_k1sq", grid_nodes: int = 6,
                    samples_per_node: int = 200_000,
                    rel_floor: float = 1e-2,
                    fit: bool = True) -> ConvergenceReport:
    """Relative contact-vs-binary operator gap over the sequence.

    Per entry: solve the occupation field, then evaluate both collision
    operators at the same fixed bulk phase probes and record the largest
    per-probe relative difference |master - boltzmann| / max(|boltzmann|,
    rel_floor * sup|boltzmann|) (the floor keeps near-zero probes from
    dominating as division noise). The probes are drawn once, at the
    largest-sigma geometry, and reused verbatim for every entry.
    """
    from .collision import boltzmann_op, master_op

    if quad is None:
        quad = QuadratureSpec()
    seq = build_sequence(c, box, ns)
    sigma_max = max(e.sigma for e in seq.entries)
    probe_model = HardSphereModel(
        n=seq.entries[0].n, sigma=sigma_max, box=box)
    probe_list = bulk_phase_probes(probe_model, pdf, probes, seed)
    rows = []
    degenerate = False
    for entry in seq.entries:
        field = solve_k1(entry.model, pdf, grid_nodes=grid_nodes,
                         samples_per_node=samples_per_node,
                         seed=derive_child_seed(seed, "bg", "ops", entry.n))
        occ = ContactOccupancy(entry.model, field)
        z1 = hat_normalization(entry.model, pdf, field, quad.position_nodes)
        m_vals = np.empty(len(probe_list))
        b_vals = np.empty(len(probe_list))
        q_err = np.empty(len(probe_list))
        for i, (r1, v1) in enumerate(probe_list):
            m = master_op(entry.model, pdf, r1, v1, quad, occ,
                          rho2_form=rho2_form, z1=z1)
            b = boltzmann_op(entry.model, pdf, r1, v1, quad)
            m_vals[i] = m.value
            b_vals[i] = b.value
            q_err[i] = m.error + b.error
        sup_b = float(np.abs(b_vals).max())
        if sup_b <= 10.0 * float(q_err.max()):
            degenerate = True
        denom = np.maximum(np.abs(b_vals), rel_floor * sup_b)
        rel = np.abs(m_vals - b_vals) / denom
        i_max = int(np.argmax(rel))
        rows.append({
            "n": entry.n, "epsilon": entry.epsilon, "sigma": entry.sigma,
            "value": float(rel[i_max]),
            "error": float(q_err[i_max] / denom[i_max]),
            "sup_abs_gap": float(np.abs(m_vals - b_vals).max()),
            "sup_boltzmann": sup_b,
            "argmax_probe": i_max,
        })
    values = [r["value"] for r in rows]
    fit_result = fit_rate(seq.epsilons(), values,
                          [r["error"] for r in rows]) if fit else None
    return ConvergenceReport(
        metric_name="max_relative_operator_gap", entries=rows, fit=fit_result,
        decreasing=_strictly_decreasing(values),
        info={"c": c, "box": box, "probes": probes, "seed": seed,
              "rho2_form": rho2_form, "rel_floor": rel_floor,
              "velocity_nodes": quad.velocity_nodes,
              "angle_nodes": quad.angle_nodes,
              "grid_nodes": grid_nodes,
              "samples_per_node": samples_per_node,
              "degenerate_metric": degenerate,
              "pdf": type(pdf).__name__})


def chaos_sweep(c: float, box: float, ns, *, pdf=None, tuple_count: int = 20,
                samples: int = 200_000, seed: int = 0, grid_nodes: int = 6,
                samples_per_node: int = 200_000, control: bool = True,
                oracle_tuples: int = 3, oracle_samples: int = 0,
                fit: bool = True) -> ConvergenceReport:
    """Decay of the two-point factorization defect over the sequence.

    Per entry: estimate the pair occupation coefficients at a fixed batch of
    bulk phase-point pairs (drawn once at the largest-sigma geometry, at
    separation 2.2 sigma_max) and record sup over the batch of |rho_2 -
    factorized part|. A point-particle control entry (sigma = 0, same N as
    the first entry) must give exactly zero; set oracle_samples > 0 to
    cross-check the first entry's pair coefficients against the direct
    (N-2)-body estimator on a few tuples (z-scores land in info).
    """
    if pdf is None:
        from .pdfs import UniformMaxwellian

        pdf = UniformMaxwellian(box=box)
    seq = build_sequence(c, box, ns)
    sigma_max = max(e.sigma for e in seq.entries)
    tuple_model = HardSphereModel(n=seq.entries[0].n, sigma=sigma_max, box=box)
    tuples = contact_pair_tuples(tuple_model, pdf, tuple_count,
                                 derive_child_seed(seed, "bg", "tuples"))
    positions = [np.stack([p.r for p in tp]) for tp in tuples]
    rows = []
    info = {"c": c, "box": box, "tuple_count": tuple_count,
            "separation": 2.2 * sigma_max, "samples": samples, "seed": seed,
            "grid_nodes": grid_nodes, "samples_per_node": samples_per_node,
            "pdf": type(pdf).__name__}
    for entry in seq.entries:
        child = derive_child_seed(seed, "bg", "chaos", entry.n)
        field = solve_k1(entry.model, pdf, grid_nodes=grid_nodes,
                         samples_per_node=samples_per_node, seed=child)
        pair_occ = estimate_ks(entry.model, pdf, positions, samples=samples,
                               seed=child, k1_field=field)
        cs = correlation_delta(entry.model, pdf, field, tuples,
                               pair_occ=pair_occ)
        i_max = int(np.argmax(np.abs(cs.delta_rho)))
        rows.append({
            "n": entry.n, "epsilon": entry.epsilon, "sigma": entry.sigma,
            "value": float(np.abs(cs.delta_rho[i_max])),
            "error": float(cs.mc_error[i_max]),
            "sup_abs_k2_minus_1": float(np.abs(pair_occ.ks_values - 1).max()),
            "argmax_tuple": i_max,
        })
        if oracle_samples > 0 and entry is seq.entries[0]:
            zs = []
            for k in range(min(oracle_tuples, len(positions))):
                bk, bse = brute_force_ks(entry.model, pdf, positions[k],
                                         oracle_samples,
                                         derive_child_seed(seed, "bg",
                                                           "oracle", k))
                mk = float(pair_occ.ks_values[k])
                mse = float(pair_occ.mc_error[k])
                zs.append((mk - bk) / math.hypot(max(bse, 1e-300), mse))
            info["oracle_z_scores"] = zs
    if control:
        control_model = HardSphereModel(n=seq.entries[0].n, sigma=0.0, box=box)
        zero_field = solve_k1(control_model, pdf, grid_nodes=grid_nodes,
                              samples_per_node=0, seed=seed)
        cs0 = correlation_delta(control_model, pdf, zero_field, tuples,
                                samples=1024, seed=seed)
        info["control_max_abs"] = float(np.abs(cs0.delta_rho).max())
    values = [r["value"] for r in rows]
    fit_result = fit_rate(seq.epsilons(), values,
                          [r["error"] for r in rows]) if fit else None
    return ConvergenceReport(
        metric_name="sup_pair_factorization_defect", entries=rows,
        fit=fit_result, decreasing=_strictly_decreasing(values), info=info)


def smoothness_ordering(c: float, box: float, ns, pdf, *, t: float = 0.0,
                        probes: int = 64, seed: int = 0):
    """delta = sigma / L_rho per sequence entry.

    The scale length of a fixed pdf does not depend on sigma, so the ratios
    delta_j / delta_i equal sigma_j / sigma_i = sqrt(eps_j / eps_i) exactly:
    the smoothness ordering holds with the square-root rate by construction
    once L_rho is finite.
    """
    from .pdfs import scale_length

    seq = build_sequence(c, box, ns)
    rows = []
    for entry in seq.entries:
        rep = scale_length(pdf, t, probes, seed, model=entry.model)
        rows.append({
            "n": entry.n, "epsilon": entry.epsilon, "sigma": entry.sigma,
            "L_rho": rep.L_rho, "delta": rep.delta,
        })
    return rows


@dataclass
class LimitOrderingReport:
    """The two iterated limits of transport applied to the occupation field.

    transport_then_limit: the contact-flux transport derivative of k1 at a
    bulk point, rescaled by epsilon^(-1/2), per sequence entry; the raw
    integral shrinks like sqrt(epsilon) (it carries a factor N sigma^3 =
    c^(3/2) sqrt(epsilon)), so the rescaled series is what can plateau at a
    finite value. limit_then_transport: transporting the epsilon-limit field
    first gives identically zero, because the limit field is constant 1.
    A nonzero plateau therefore shows the two operations do not commute.
    """

    entries: list
    plateau_rel_change: float
    plateau_ok: bool
    nonzero_limit: bool
    sup_k1_final: float
    limit_then_transport: float
    commutative: bool
    info: dict = dataclass_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "entries": self.entries,
            "plateau_rel_change": self.plateau_rel_change,
            "plateau_ok": self.plateau_ok,
            "nonzero_limit": self.nonzero_limit,
            "sup_k1_final": self.sup_k1_final,
            "limit_then_transport": self.limit_then_transport,
            "commutative": self.commutative,
            "info": self.info,
        }


def noncommutativity_report(c: float, box: float, ns, pdf, *,
                            r1=None, probe_velocity=None, quad=None,
                            grid_nodes: int = 8,
                            samples_per_node: int = 400_000,
                            seed: int = 0,
                            plateau_tol: float = 0.05) -> LimitOrderingReport:
    """Compare transport-then-limit against limit-then-transport for k1.

    Per entry: solve the field, evaluate the contact-flux transport
    derivative of k1 at the fixed bulk point r1 (box center by default) with
    the fixed probe velocity, and rescale by epsilon^(-1/2). The report
    flags a plateau when the last two rescaled values agree within
    plateau_tol relative, flags the limit as resolved when the final value
    exceeds 10x its quadrature error, and reports sup|k1 - 1| of the final
    entry, which must be heading to zero for the ordering contrast to mean
    anything. Densities whose transport derivative vanishes identically
    (uniform bulk: the flux integrand is odd) come out flagged commutative.
    """
    seq = build_sequence(c, box, ns)
    if r1 is None:
        r1 = np.full(3, box / 2.0)
    rows = []
    for entry in seq.entries:
        field = solve_k1(entry.model, pdf, grid_nodes=grid_nodes,
                         samples_per_node=samples_per_node,
                         seed=derive_child_seed(seed, "bg", "noncomm",
                                                entry.n))
        occ = ContactOccupancy(entry.model, field)
        rep = l1_k1_contact_integral(pdf, occ, entry.model, r1, quad=quad,
                                     probe_velocity=probe_velocity)
        scale = entry.epsilon ** -0.5
        rows.append({
            "n": entry.n, "epsilon": entry.epsilon, "sigma": entry.sigma,
            "raw_value": rep.value, "raw_error": rep.error,
            "rescaled_value": rep.value * scale,
            "rescaled_error": rep.error * scale,
            "sup_abs_k1_minus_1": field.sup_abs_deviation(),
        })
    commutative = all(abs(r["raw_value"]) <= 10.0 * r["raw_error"]
                      for r in rows)
    last, prev = rows[-1], rows[-2]
    denom = abs(last["rescaled_value"])
    rel_change = (abs(last["rescaled_value"] - prev["rescaled_value"])
                  / denom if denom > 0 else math.inf)
    nonzero = abs(last["rescaled_value"]) > 10.0 * last["rescaled_error"]
    return LimitOrderingReport(
        entries=rows,
        plateau_rel_change=rel_change,
        plateau_ok=bool(rel_change < plateau_tol) and not commutative,
        nonzero_limit=bool(nonzero),
        sup_k1_final=rows[-1]["sup_abs_k1_minus_1"],
        limit_then_transport=0.0,
        commutative=commutative,
        info={"c": c, "box": box, "r1": [float(x) for x in r1],
              "seed": seed, "grid_nodes": grid_nodes,
              "samples_per_node": samples_per_node,
              "plateau_tol": plateau_tol, "pdf": type(pdf).__name__,
              "rescale_exponent": -0.5})
