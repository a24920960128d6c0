"""Oracle-only verification suite.

Every entry compares a computed ``value`` with a ``reference`` under a
``relation``:

* ``abs``: ``|value - reference| <= tolerance``
* ``le``:  ``value <= reference + tolerance``
* ``gt``:  ``value > reference + tolerance``

No trained model is needed; learned fields are replaced by exact oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import energy
from .numcore import Rng, global_norm, mlp_init
from .solver import OracleDenoiser, min_C, oracle_inversion_error, solver_coeffs
from .training import consistency_grads, total_derivative
from .trajectory import TrajectoryParams, _build, bridge_point, bridge_velocity

SCHEMA_VERSION = 1
INVERSION_T0 = (0.2, 0.35, 0.5, 0.65, 0.8, 0.95, 1.0)

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "passed", "propositions"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "passed": {"type": "boolean"},
        "propositions": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "value", "reference", "tolerance", "passed"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "value": {"type": "number"},
                    "reference": {"type": "number"},
                    "tolerance": {"type": "number", "minimum": 0},
                    "relation": {"enum": ["abs", "le", "gt"]},
                    "passed": {"type": "boolean"},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class Proposition:
    name: str
    value: float
    reference: float
    tolerance: float
    relation: str = "abs"

    @property
    def passed(self) -> bool:
        v, ref, tol = float(self.value), float(self.reference), float(self.tolerance)
        if not math.isfinite(v):
            return False
        if self.relation == "abs":
            return abs(v - ref) <= tol
        if self.relation == "le":
            return v <= ref + tol
        return v > ref + tol

    def as_dict(self) -> dict:
        return {"name": self.name, "value": float(self.value), "reference": float(self.reference),
                "tolerance": float(self.tolerance), "relation": self.relation, "passed": self.passed}


def inversion_battery(n: int = 10_000, dim: int = 8, seed: int = 0, perturb_coeffs: float = 0.0) -> float:
    """Largest relative inversion error over ``n`` random tuples.

    ``perturb_coeffs`` scales ``A`` by ``1 + perturb_coeffs`` (fault injection).
    """
    rng = Rng(seed, (21,))
    T0 = np.asarray(INVERSION_T0)[rng.integers(0, len(INVERSION_T0), n)]
    t = T0 * (1.0 - rng.uniform(0.0, 1.0, n))
    x0, y, xT = (rng.normal((n, dim)) for _ in range(3))
    coeffs = solver_coeffs(t, T0)
    if perturb_coeffs:
        coeffs = replace(coeffs, A=coeffs.A * (1.0 + perturb_coeffs))
    return float(np.max(oracle_inversion_error(x0, y, xT, t, T0, coeffs)))


def _coeff_props() -> list[Proposition]:
    t_axis = np.linspace(0.0, 1.0, 32)
    T0_axis = np.linspace(0.05, 1.0, 32)
    tt, TT = np.meshgrid(t_axis, T0_axis)
    tt = np.minimum(tt, TT).ravel()
    TT = TT.ravel()
    c = solver_coeffs(tt, TT)
    ident = float(max(np.max(np.abs(c.C - (1.0 - c.A))), np.max(np.abs(c.B - tt))))
    c0 = solver_coeffs(0.0, 0.7)
    boundary = abs(c0.A) + abs(c0.B) + abs(c0.C - 1.0)
    worst = 0.0
    for T0 in (0.2, 0.4, 0.5, 0.6, 0.8, 1.0):
        fine = np.linspace(0.0, T0, 200_001)
        worst = max(worst, abs(float(np.min(solver_coeffs(fine, T0).C)) - min_C(T0)))
    return [
        Proposition("coeff_identities", ident, 0.0, 0.0),
        Proposition("coeff_boundary_t0", boundary, 0.0, 0.0),
        Proposition("coeff_C_positive", float(np.min(c.C)), 0.0, 0.0, "gt"),
        Proposition("coeff_min_C_closed_form", worst, 0.0, 1e-9),
    ]


def _jensen_props(n: int) -> list[Proposition]:
    rng = Rng(0, (22,))
    worst = 0.0
    for T0 in (0.3, 0.6, 1.0):
        x0, y = rng.normal(3), rng.normal(3)
        e = energy.kinetic_energy(energy.geodesic_fn(x0, y, T0), 0.0, T0, n)
        worst = max(worst, abs(e - float(np.sum((y - x0) ** 2)) / (2.0 * T0)))
    x0, y = np.array([1.0, -0.5]), np.array([0.0, 0.5])
    props = [Proposition("kinetic_geodesic_closed_form", worst, 0.0, 1e-6)]
    for kind in ("EBridge", "StandardDiffusion"):
        _, _, gap = energy.jensen_check(energy.path_fn(TrajectoryParams(kind, T0=0.8), x0, y), 0.0,
                                        0.8 if kind == "EBridge" else 1.0, n)
        props.append(Proposition(f"jensen_gap_{kind}", gap, 0.0, 1e-8, "le"))
        props.append(Proposition(f"jensen_gap_nonnegative_{kind}", -gap, 0.0, energy.JENSEN_SLACK, "le"))
    for theta in (0.5, 1.0, 2.0):
        p = TrajectoryParams("OUMeanPath", theta=theta)
        e, _, gap = energy.jensen_check(energy.path_fn(p, x0, y), 0.0, 1.0, n)
        props.append(Proposition(f"ou_gap_theta_{theta:g}", gap, 1e-4, 0.0, "gt"))
        props.append(Proposition(f"ou_energy_closed_form_theta_{theta:g}", e,
                                 energy.closed_form_kinetic(p, x0, y), 1e-6))
    return props


def _control_props(n: int) -> list[Proposition]:
    x0, y = np.array([0.3, -1.2]), np.array([1.0, 0.4])
    p = TrajectoryParams("EBridge", T0=0.7)
    grid = np.linspace(0.0, p.T0, n)
    ctrl = energy.control_energy(energy.path_fn(p, x0, y), energy.drift_fn(p, x0, y), grid)
    ou = TrajectoryParams("OUMeanPath", theta=1.0)
    mismatch = energy.control_energy(energy.path_fn(ou, x0, y), lambda t: (y - x0),
                                     np.linspace(0.0, 1.0, n))
    return [
        Proposition("control_energy_geodesic", ctrl, 0.0, 1e-10, "le"),
        Proposition("control_energy_ou_vs_constant_drift", mismatch, 0.0, 0.0, "gt"),
    ]


def _adaptation_props() -> list[Proposition]:
    rng = Rng(0, (23,))
    worst = 0.0
    for t in rng.uniform(0.0, 1.0, 20):
        grid = energy.adaptation_energy_landscape(float(t), 1.5, 2)
        a, b = grid.argmin
        worst = max(worst, abs(a - (1.0 - t)), abs(b - t))
    worst_mc = 0.0
    for alpha, beta, t, C1, d in ((0.6, 0.4, 0.5, 1.0, 2), (0.2, 0.9, 0.3, 2.0, 4), (0.9, 0.05, 0.2, 0.5, 8)):
        ref = float(energy.adaptation_energy(alpha, beta, t, C1, d))
        mc = energy.adaptation_energy_mc(alpha, beta, t, C1, d)
        worst_mc = max(worst_mc, abs(mc - ref) / ref)
    return [
        Proposition("adaptation_grid_argmin", worst, 0.0, 0.005),
        Proposition("adaptation_monte_carlo_rel", worst_mc, 0.0, 0.02),
    ]


def _feedback_props() -> list[Proposition]:
    return [
        Proposition("feedback_decay_rk4", energy.feedback_decay_check([1.0, -0.5], 2.0, 1.0, 1000), 0.0, 1e-8),
        Proposition("feedback_zero_deviation", energy.feedback_decay_check([0.0], 2.0, 1.0, 1000), 0.0, 0.0),
    ]


def _budget_props() -> list[Proposition]:
    props = []
    for T0 in (0.5, 0.9, 0.95):
        vb = energy.velocity_budget(T0)
        props.append(Proposition(f"lipschitz_budget_T0_{T0:g}", vb.integral, vb.analytic, 1e-6))
        props.append(Proposition(f"velocity_sup_bounded_T0_{T0:g}", vb.sup_norm_samples, vb.bound, 0.0, "le"))
    return props


def _trajectory_props() -> list[Proposition]:
    rng = Rng(0, (24,))
    x0, y, xT = (rng.normal((64, 3)) for _ in range(3))
    T0, h = 0.8, 1e-5
    worst = 0.0
    for t in (0.1, 0.4, 0.7):
        fd = (bridge_point(x0, y, xT, t + h, T0) - bridge_point(x0, y, xT, t - h, T0)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - bridge_velocity(x0, xT - x0, y, t, T0)))))
    return [Proposition("bridge_velocity_matches_path_derivative", worst, 0.0, 1e-6)]


def _fixed_point_props() -> list[Proposition]:
    rng = Rng(0, (25,))
    n, d = 64, 2
    T0 = rng.uniform(0.2, 0.95, n)
    t = T0 * (1.0 - rng.uniform(0.0, 1.0, n))
    x0, y, xT = (rng.normal((n, d)) for _ in range(3))
    oracle = OracleDenoiser(x0, T0)
    tan = total_derivative(oracle, x0, y, xT, t, T0, 1e-3 * T0)
    batch = _build(x0, y, xT, t, T0)
    # zero output layer: the residual vanishes but its Jacobian does not
    net = mlp_init([2 * d + 8, 16, d], 8, 0)
    params = net.params()
    params[-2] = np.zeros_like(params[-2])
    net = net.with_params(params)
    grads, _, _ = consistency_grads(net, oracle, batch, 1e-3, base=oracle)
    return [
        Proposition("oracle_total_derivative", float(np.max(np.linalg.norm(tan, axis=1))), 0.0, 1e-8, "le"),
        Proposition("oracle_consistency_grad_norm", global_norm(grads), 0.0, 1e-6, "le"),
    ]


def run_verification(n_quadrature: int = energy.DEFAULT_N, perturb_coeffs: float = 0.0) -> dict:
    """Run every check; returns the report document."""
    props = [Proposition("solver_inversion", inversion_battery(perturb_coeffs=perturb_coeffs), 0.0, 1e-11)]
    props += _coeff_props()
    props += _jensen_props(n_quadrature)
    props += _control_props(n_quadrature)
    props += _adaptation_props()
    props += _feedback_props()
    props += _budget_props()
    props += _trajectory_props()
    props += _fixed_point_props()
    entries = [p.as_dict() for p in props]
    return {"schema_version": SCHEMA_VERSION, "passed": all(e["passed"] for e in entries),
            "propositions": entries}


__all__ = ["Proposition", "REPORT_SCHEMA", "SCHEMA_VERSION", "inversion_battery", "run_verification"]
