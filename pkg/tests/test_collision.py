"""Collision operators: elastic map, hemispheres, annihilation, audits."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hsgas.collision import (
    MOMENT_WEIGHTS,
    boltzmann_op,
    classify_solid_angle,
    elastic_map,
    master_op,
    moment_audit,
    operator_scan,
)
from hsgas.geometry import HardSphereModel
from hsgas.occupation import (
    ContactOccupancy,
    OccupationField,
    analytic_k1_uniform,
)
from hsgas.pdfs import UniformMaxwellian, VelocityMixture
from hsgas.quadrature import QuadratureSpec

BULK = np.array([0.5, 0.5, 0.5])
MODEL = HardSphereModel(n=64, sigma=0.02, box=1.0)


def mixture_pdf():
    return VelocityMixture(
        1.0, [(0.5, (0.4, 0.0, 0.0), 0.8), (0.5, (-0.4, 0.0, 0.0), 1.2)]
    )


def unit_contact_occ(model, value=1.0):
    field = OccupationField.constant(4, model.box, value, model=model)
    return ContactOccupancy(model, field, mode="insertion")


# --------------------------------------------------------------------------
# elastic map


def test_elastic_map_head_on_swap():
    v1p, v2p = elastic_map(np.array([1.0, 0, 0]), np.array([-1.0, 0, 0]),
                           np.array([1.0, 0, 0]))
    assert np.allclose(v1p, [-1.0, 0, 0]) and np.allclose(v2p, [1.0, 0, 0])


def test_elastic_map_grazing_identity():
    v1, v2 = np.array([1.0, 0, 0]), np.array([-1.0, 0, 0])
    n = np.array([0.0, 1.0, 0.0])  # perpendicular to the relative velocity
    v1p, v2p = elastic_map(v1, v2, n)
    assert np.array_equal(v1p, v1) and np.array_equal(v2p, v2)


def test_elastic_map_worked_example():
    v1p, v2p = elastic_map(np.array([1.0, 2.0, 0]), np.zeros(3),
                           np.array([0.0, 1.0, 0]))
    assert np.allclose(v1p, [1.0, 0.0, 0.0])
    assert np.allclose(v2p, [0.0, 2.0, 0.0])
    assert (v1p ** 2).sum() + (v2p ** 2).sum() == pytest.approx(5.0, rel=1e-14)


def unit_vectors():
    return st.tuples(
        st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0)
    ).map(np.array).filter(lambda v: 0.1 < np.linalg.norm(v)).map(
        lambda v: v / np.linalg.norm(v))


vel = st.tuples(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0),
                st.floats(-3.0, 3.0)).map(np.array)


@given(vel, vel, unit_vectors())
def test_elastic_map_conservation(v1, v2, n):
    v1p, v2p = elastic_map(v1, v2, n)
    assert np.allclose(v1p + v2p, v1 + v2, atol=1e-12)
    assert (v1p ** 2).sum() + (v2p ** 2).sum() == pytest.approx(
        (v1 ** 2).sum() + (v2 ** 2).sum(), abs=1e-11)
    # normal relative speed flips, tangential part is untouched
    g, gp = v1 - v2, v1p - v2p
    assert float(gp @ n) == pytest.approx(-float(g @ n), abs=1e-11)


@given(vel, vel, unit_vectors())
def test_elastic_map_involution(v1, v2, n):
    v1p, v2p = elastic_map(*elastic_map(v1, v2, n), n)
    assert np.allclose(v1p, v1, atol=1e-12)
    assert np.allclose(v2p, v2, atol=1e-12)


@given(vel, vel, unit_vectors(), vel)
def test_elastic_map_galilean(v1, v2, n, w):
    a, b = elastic_map(v1, v2, n)
    ab, bb = elastic_map(v1 + w, v2 + w, n)
    assert np.allclose(ab, a + w, atol=1e-12)
    assert np.allclose(bb, b + w, atol=1e-12)


def test_classify_solid_angle_cases():
    v12 = np.array([1.0, 0.0, 0.0])
    assert classify_solid_angle(v12, np.array([1.0, 0, 0])) == "incoming"
    assert classify_solid_angle(v12, np.array([-1.0, 0, 0])) == "outgoing"
    assert classify_solid_angle(v12, np.array([0.0, 1.0, 0])) == "tangential"


# --------------------------------------------------------------------------
# operator values


def test_maxwell_annihilation_both_flavors():
    quad = QuadratureSpec(velocity_nodes=14, angle_nodes=50)
    pdf = UniformMaxwellian(1.0)
    v1 = np.array([0.5, 0.2, -0.1])
    b = boltzmann_op(MODEL, pdf, BULK, v1, quad)
    assert b.loss > 0.0
    assert abs(b.value) <= 3.0 * b.error
    occ = unit_contact_occ(MODEL, analytic_k1_uniform(MODEL))
    m = master_op(MODEL, pdf, BULK, v1, quad, occ)
    assert m.loss > 0.0
    assert abs(m.value) <= 3.0 * m.error


def test_boltzmann_linear_in_n_sigma_sq():
    quad = QuadratureSpec(velocity_nodes=12, angle_nodes=26)
    pdf = mixture_pdf()
    v1 = np.array([0.3, 0.1, 0.0])
    small = HardSphereModel(n=32, sigma=0.02, box=1.0)
    big = HardSphereModel(n=64, sigma=0.02, box=1.0)
    a = boltzmann_op(small, pdf, BULK, v1, quad)
    b = boltzmann_op(big, pdf, BULK, v1, quad)
    assert b.gain == pytest.approx(2.0 * a.gain, rel=1e-14)
    assert b.loss == pytest.approx(2.0 * a.loss, rel=1e-14)
    assert b.value == pytest.approx(2.0 * a.value, rel=1e-12)


def test_hemisphere_equivalence_on_mixture():
    quad = QuadratureSpec(velocity_nodes=14, angle_nodes=75)
    pdf = mixture_pdf()
    v1 = np.array([0.6, 0.2, 0.1])
    out = boltzmann_op(MODEL, pdf, BULK, v1, quad, hemisphere="outgoing")
    inc = boltzmann_op(MODEL, pdf, BULK, v1, quad, hemisphere="incoming")
    assert out.value != inc.value  # genuinely independent rules
    combined = out.error + inc.error
    assert abs(out.value - inc.value) <= 3.0 * combined
    with pytest.raises(ValueError):
        boltzmann_op(MODEL, pdf, BULK, v1, quad, hemisphere="sideways")


def test_master_rejects_unknown_pair_form():
    quad = QuadratureSpec(velocity_nodes=12, angle_nodes=26)
    occ = unit_contact_occ(MODEL)
    with pytest.raises(ValueError):
        master_op(MODEL, UniformMaxwellian(1.0), BULK, np.zeros(3), quad, occ,
                  rho2_form="geometric_mean")


def test_mc_mode_cross_validates_deterministic():
    pdf = mixture_pdf()
    v1 = np.array([0.6, 0.2, 0.1])
    det = boltzmann_op(MODEL, pdf, BULK, v1,
                       QuadratureSpec(velocity_nodes=16, angle_nodes=75))
    # MC draws velocity_nodes**3 joint samples: 58^3 is about 195k
    mc = boltzmann_op(MODEL, pdf, BULK, v1,
                      QuadratureSpec(mode="mc", velocity_nodes=58,
                                     angle_nodes=8, seed=4))
    combined = math.hypot(det.error, mc.error)
    assert mc.error > 0.0
    assert abs(det.value - mc.value) <= 4.0 * combined


def test_operator_scan_rows():
    quad = QuadratureSpec(velocity_nodes=12, angle_nodes=26)
    pdf = UniformMaxwellian(1.0)
    probes = [(BULK, np.array([0.2, 0.0, 0.0])),
              (np.array([0.4, 0.5, 0.6]), np.array([0.0, 0.3, 0.0]))]
    rows = operator_scan(MODEL, pdf, probes, quad, "boltzmann")
    assert len(rows) == 2 and all(len(r) == 10 for r in rows)
    for (r1, v1), row in zip(probes, rows):
        assert np.allclose(row[:3], r1) and np.allclose(row[3:6], v1)
        value, error, gain, loss = row[6:]
        assert value == pytest.approx(gain - loss, rel=1e-12, abs=1e-300)
        assert error >= 0.0 and loss > 0.0


# --------------------------------------------------------------------------
# collisional-invariant audits


def test_moment_audit_names():
    assert MOMENT_WEIGHTS == ("mass", "momentum_x", "momentum_y",
                              "momentum_z", "energy")


def test_moment_audit_maxwell_is_machine_zero():
    # single-width Maxwell velocity law: gain cancels loss pointwise, so the
    # audit is roundoff-limited at any node budget
    quad = QuadratureSpec(velocity_nodes=8, angle_nodes=26)
    audit = moment_audit(MODEL, UniformMaxwellian(1.0), BULK, quad,
                         "boltzmann", outer_nodes=6)
    assert set(audit.residuals) == set(MOMENT_WEIGHTS)
    assert audit.worst_relative() < 1e-10


def test_moment_audit_mixture_converges():
    quad = QuadratureSpec(velocity_nodes=12, angle_nodes=48)
    audit = moment_audit(MODEL, mixture_pdf(), BULK, quad, "boltzmann",
                         outer_nodes=10)
    assert audit.worst_relative() < 2e-2
    assert all(s > 0 for s in audit.scales.values())
