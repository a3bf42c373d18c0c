"""Closed-form dynamics of a two-link planar arm holding a point mass.

The arm is a shoulder-elbow chain of rigid segments moving in the sagittal
plane. Joint angles follow the convention: ``q[0]`` is the shoulder angle
measured from the downward vertical, ``q[1]`` is elbow flexion relative to
the upper arm with 0 = fully extended. The hanging rest pose ``q = (0, 0)``
is therefore a torque-free equilibrium. A hand-held load of mass ``m`` is
modeled as a point mass rigidly attached at the forearm tip (distance ``l2``
from the elbow).

All functions are pure and broadcast over leading axes, so a whole
trajectory of shape ``(T, 2)`` is handled in one call. The load may be a
scalar or an array broadcasting with the time axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRAVITY = 9.81


class SingularInertiaError(RuntimeError):
    """Inertia matrix is numerically singular; model parameters are degenerate."""


@dataclass(frozen=True)
class AnthroConfig:
    """Whole-body stature/mass plus segment scaling fractions.

    The default fractions are taken from Winter's anthropometric tables
    (Biomechanics and Motor Control of Human Movement): segment mass and COM
    for the upper arm and the combined forearm+hand, and radius-of-gyration
    fractions for segment moments of inertia about the COM. The forearm+hand
    length fraction is measured elbow to hand center (forearm 0.146 of
    stature plus half a hand length).
    """

    body_mass: float
    body_height: float
    upper_arm_length_fraction: float = 0.186
    forearm_hand_length_fraction: float = 0.200
    upper_arm_mass_fraction: float = 0.028
    forearm_hand_mass_fraction: float = 0.022
    com_fraction_upper: float = 0.436
    com_fraction_forearm: float = 0.682
    radius_of_gyration_fraction_upper: float = 0.322
    radius_of_gyration_fraction_forearm: float = 0.468

    def __post_init__(self):
        for name in ("body_mass", "body_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in (
            "upper_arm_length_fraction",
            "forearm_hand_length_fraction",
            "upper_arm_mass_fraction",
            "forearm_hand_mass_fraction",
            "com_fraction_upper",
            "com_fraction_forearm",
            "radius_of_gyration_fraction_upper",
            "radius_of_gyration_fraction_forearm",
        ):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")


@dataclass(frozen=True)
class ArmModel:
    """Physical parameters of the two-link chain, SI units.

    ``lc*`` are proximal-joint-to-COM distances, ``I*`` are segment moments
    of inertia about their own COM.
    """

    l1: float
    l2: float
    m1: float
    m2: float
    lc1: float
    lc2: float
    I1: float
    I2: float
    g: float = GRAVITY

    def __post_init__(self):
        for name in ("l1", "l2", "m1", "m2", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 < self.lc1 < self.l1:
            raise ValueError("lc1 must lie strictly between 0 and l1")
        if not 0.0 < self.lc2 < self.l2:
            raise ValueError("lc2 must lie strictly between 0 and l2")
        if self.I1 < 0 or self.I2 < 0:
            raise ValueError("segment inertias must be nonnegative")


def build_arm_model(anthro: AnthroConfig, g: float = GRAVITY) -> ArmModel:
    """Scale an anthropometric config into concrete segment parameters."""
    l1 = anthro.upper_arm_length_fraction * anthro.body_height
    l2 = anthro.forearm_hand_length_fraction * anthro.body_height
    m1 = anthro.upper_arm_mass_fraction * anthro.body_mass
    m2 = anthro.forearm_hand_mass_fraction * anthro.body_mass
    return ArmModel(
        l1=l1,
        l2=l2,
        m1=m1,
        m2=m2,
        lc1=anthro.com_fraction_upper * l1,
        lc2=anthro.com_fraction_forearm * l2,
        I1=m1 * (anthro.radius_of_gyration_fraction_upper * l1) ** 2,
        I2=m2 * (anthro.radius_of_gyration_fraction_forearm * l2) ** 2,
        g=g,
    )


def _check_load(load):
    # The algebra extends smoothly to any real m, and the physics loss
    # evaluates it at (possibly negative) predicted loads, so only
    # finiteness is enforced here. Actual load labels are validated as
    # nonnegative where they enter the system.
    load = np.asarray(load, dtype=float)
    if not np.all(np.isfinite(load)):
        raise ValueError("load mass must be finite")
    return load


def _mass_terms(model: ArmModel, load):
    """Coefficients of the inertia matrix, including the hand load.

    M = [[a + 2 b cos(q2), d + b cos(q2)],
         [d + b cos(q2),   d            ]]
    """
    a = (model.I1 + model.I2 + model.m1 * model.lc1 ** 2
         + model.m2 * (model.l1 ** 2 + model.lc2 ** 2)
         + load * (model.l1 ** 2 + model.l2 ** 2))
    b = model.m2 * model.l1 * model.lc2 + load * model.l1 * model.l2
    d = model.I2 + model.m2 * model.lc2 ** 2 + load * model.l2 ** 2
    return a, b, d


def inertia_matrix(model: ArmModel, q, load=0.0) -> np.ndarray:
    """Symmetric positive definite inertia matrix, shape ``(..., 2, 2)``."""
    q = np.asarray(q, dtype=float)
    load = _check_load(load)
    a, b, d = _mass_terms(model, load)
    c2 = np.cos(q[..., 1])
    m11 = a + 2.0 * b * c2
    m12 = d + b * c2
    m22 = d + np.zeros_like(m11)
    return np.stack(
        [np.stack([m11, m12], axis=-1), np.stack([m12, m22], axis=-1)],
        axis=-2,
    )


def coriolis_vector(model: ArmModel, q, qd, load=0.0) -> np.ndarray:
    """Centrifugal and Coriolis torques ``C(q, qd)``, quadratic in ``qd``."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    load = _check_load(load)
    _, b, _ = _mass_terms(model, load)
    h = b * np.sin(q[..., 1])
    qd1, qd2 = qd[..., 0], qd[..., 1]
    return np.stack(
        [-h * (2.0 * qd1 * qd2 + qd2 ** 2), h * qd1 ** 2], axis=-1
    )


def _gravity_coefficients(model: ArmModel, load):
    """Moment coefficients of sin(q1) and sin(q1+q2) in the gravity vector."""
    g1c = model.m1 * model.lc1 + (model.m2 + load) * model.l1
    g2c = model.m2 * model.lc2 + load * model.l2
    return g1c, g2c


def gravity_vector(model: ArmModel, q, load=0.0) -> np.ndarray:
    """Gravity torques ``G(q)`` for the chain plus the hand load."""
    q = np.asarray(q, dtype=float)
    load = _check_load(load)
    g1c, g2c = _gravity_coefficients(model, load)
    s1 = np.sin(q[..., 0])
    s12 = np.sin(q[..., 0] + q[..., 1])
    return np.stack(
        [model.g * (g1c * s1 + g2c * s12), model.g * g2c * s12], axis=-1
    )


def inverse_dynamics(model: ArmModel, q, qd, qdd, load=0.0) -> np.ndarray:
    """Joint torques ``tau = M(q) qdd + C(q, qd) + G(q)``, shape ``(..., 2)``."""
    qdd = np.asarray(qdd, dtype=float)
    M = inertia_matrix(model, q, load)
    tau = np.einsum("...ij,...j->...i", M, qdd)
    tau += coriolis_vector(model, q, qd, load)
    tau += gravity_vector(model, q, load)
    return tau


def forward_dynamics(model: ArmModel, q, qd, tau, load=0.0,
                     cond_limit: float = 1e12) -> np.ndarray:
    """Accelerations from torques: ``qdd = M^{-1} (tau - C - G)``.

    Raises SingularInertiaError when the inertia matrix is numerically
    singular, which only happens for degenerate model parameters.
    """
    tau = np.asarray(tau, dtype=float)
    M = inertia_matrix(model, q, load)
    if np.max(np.linalg.cond(M)) > cond_limit:
        raise SingularInertiaError(
            f"inertia matrix condition number exceeds {cond_limit:g}"
        )
    rhs = tau - coriolis_vector(model, q, qd, load) - gravity_vector(model, q, load)
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def dynamics_jacobians(model: ArmModel, q, qd, qdd, load=0.0):
    """Closed-form partials of the inverse-dynamics torque.

    Returns ``(dtau_dq, dtau_dqd, dtau_dqdd, dtau_dm)`` with shapes
    ``(..., 2, 2)`` for the first three (row = torque component, column =
    differentiated state component) and ``(..., 2)`` for the load partial.
    ``dtau_dqdd`` is exactly the inertia matrix.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    load = _check_load(load)

    _, b, _ = _mass_terms(model, load)
    g1c, g2c = _gravity_coefficients(model, load)
    s1, c1 = np.sin(q[..., 0]), np.cos(q[..., 0])
    q12 = q[..., 0] + q[..., 1]
    s12, c12 = np.sin(q12), np.cos(q12)
    s2, c2 = np.sin(q[..., 1]), np.cos(q[..., 1])
    qd1, qd2 = qd[..., 0], qd[..., 1]
    qdd1, qdd2 = qdd[..., 0], qdd[..., 1]
    g = model.g

    dtau_dqdd = inertia_matrix(model, q, load)

    # d tau / d q: inertia and Coriolis terms depend on q2 only; gravity on both.
    zeros = np.zeros_like(s1)
    j_q00 = g * (g1c * c1 + g2c * c12)
    j_q01 = (-2.0 * b * s2 * qdd1 - b * s2 * qdd2
             - b * c2 * (2.0 * qd1 * qd2 + qd2 ** 2) + g * g2c * c12)
    j_q10 = g * g2c * c12 + zeros
    j_q11 = -b * s2 * qdd1 + b * c2 * qd1 ** 2 + g * g2c * c12
    dtau_dq = np.stack(
        [np.stack([j_q00, j_q01], axis=-1), np.stack([j_q10, j_q11], axis=-1)],
        axis=-2,
    )

    h = b * s2
    j_v00 = -2.0 * h * qd2
    j_v01 = -2.0 * h * (qd1 + qd2)
    j_v10 = 2.0 * h * qd1
    j_v11 = zeros
    dtau_dqd = np.stack(
        [np.stack([j_v00, j_v01], axis=-1), np.stack([j_v10, j_v11], axis=-1)],
        axis=-2,
    )

    # Load partials: the load enters the mass terms linearly.
    da = model.l1 ** 2 + model.l2 ** 2
    db = model.l1 * model.l2
    dd = model.l2 ** 2
    j_m0 = ((da + 2.0 * db * c2) * qdd1 + (dd + db * c2) * qdd2
            - db * s2 * (2.0 * qd1 * qd2 + qd2 ** 2)
            + g * (model.l1 * s1 + model.l2 * s12))
    j_m1 = ((dd + db * c2) * qdd1 + dd * qdd2 + db * s2 * qd1 ** 2
            + g * model.l2 * s12)
    dtau_dm = np.stack([j_m0, j_m1], axis=-1)

    return dtau_dq, dtau_dqd, dtau_dqdd, dtau_dm


def kinetic_energy(model: ArmModel, q, qd, load=0.0):
    """Total kinetic energy ``0.5 qd' M(q) qd``."""
    qd = np.asarray(qd, dtype=float)
    M = inertia_matrix(model, q, load)
    return 0.5 * np.einsum("...i,...ij,...j->...", qd, M, qd)


def potential_energy(model: ArmModel, q, load=0.0):
    """Gravitational potential energy, zero at the hanging rest pose."""
    q = np.asarray(q, dtype=float)
    load = _check_load(load)
    g1c, g2c = _gravity_coefficients(model, load)
    c1 = np.cos(q[..., 0])
    c12 = np.cos(q[..., 0] + q[..., 1])
    return model.g * (g1c * (1.0 - c1) + g2c * (1.0 - c12))


def total_energy(model: ArmModel, q, qd, load=0.0):
    return kinetic_energy(model, q, qd, load) + potential_energy(model, q, load)


_ARM_FIELDS = ("l1", "l2", "m1", "m2", "lc1", "lc2", "I1", "I2", "g")
_ANTHRO_FIELDS = (
    "body_mass", "body_height",
    "upper_arm_length_fraction", "forearm_hand_length_fraction",
    "upper_arm_mass_fraction", "forearm_hand_mass_fraction",
    "com_fraction_upper", "com_fraction_forearm",
    "radius_of_gyration_fraction_upper", "radius_of_gyration_fraction_forearm",
)

_ARM_FILE_HEADER = (
    "two-link arm model parameters, SI units\n"
    "segment fractions follow Winter's anthropometric tables; the combined\n"
    "forearm+hand segment length is measured elbow to hand center"
)


def arm_model_to_dict(model: ArmModel) -> dict:
    return {name: getattr(model, name) for name in _ARM_FIELDS}


def arm_model_from_dict(entries: dict) -> ArmModel:
    missing = [name for name in _ARM_FIELDS if name not in entries]
    if missing:
        raise ValueError(f"arm model config missing keys: {', '.join(missing)}")
    return ArmModel(**{name: float(entries[name]) for name in _ARM_FIELDS})


def save_arm_model(model: ArmModel, path):
    from . import io

    io.write_keyvalue(path, arm_model_to_dict(model), header=_ARM_FILE_HEADER)


def load_arm_model(path) -> ArmModel:
    from . import io

    return arm_model_from_dict(io.read_keyvalue(path))


def save_anthro(anthro: AnthroConfig, path):
    from . import io

    entries = {name: getattr(anthro, name) for name in _ANTHRO_FIELDS}
    io.write_keyvalue(path, entries, header=_ARM_FILE_HEADER)


def load_anthro(path) -> AnthroConfig:
    from . import io

    entries = io.read_keyvalue(path)
    missing = [name for name in _ANTHRO_FIELDS if name not in entries]
    if missing:
        raise ValueError(f"anthro config missing keys: {', '.join(missing)}")
    return AnthroConfig(**{name: float(entries[name]) for name in _ANTHRO_FIELDS})


def default_arm_model(body_mass: float = 73.0, body_height: float = 1.74) -> ArmModel:
    """Arm model for the default subject statistics."""
    return build_arm_model(AnthroConfig(body_mass=body_mass, body_height=body_height))
