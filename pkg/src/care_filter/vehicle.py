"""Kinematic bicycle scenario: matrices, attack waveform, constraint boxes.

State is (x, y, psi, v); the input channel carries (beta, a) where beta is
the slip angle induced by the steering angle delta through
beta = arctan(l_r tan(delta) / (l_f + l_r)). The attacker injects a
steering component and an acceleration component on that channel. All
matrices are discretized at a fixed sample time and scheduled on the
current speed.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from .model import ConstraintSet, SystemModel

__all__ = [
    "VehicleParams",
    "attack_input",
    "attack_signal",
    "bicycle_matrices",
    "build_constraints",
    "slip_angle",
    "steering_angle",
    "vehicle_constraints",
    "vehicle_model",
]


@dataclass(frozen=True)
class VehicleParams:
    l_f: float = 1.25
    l_r: float = 1.25
    T_s: float = 0.01
    x_max: float = 20.0
    y_max: float = 5.0
    v_max: float = 22.0
    steer_max: float = 1.0472
    accel_max: float = 3.5
    q_diag: tuple = (0.1, 0.1, 0.001, 0.0001)
    r_diag: tuple = (0.01, 0.01, 0.001, 0.00001)


def slip_angle(delta: float, params: VehicleParams = VehicleParams()) -> float:
    """Slip angle beta produced by steering angle delta."""
    return math.atan(params.l_r * math.tan(delta) / (params.l_f + params.l_r))


def steering_angle(beta: float, params: VehicleParams = VehicleParams()) -> float:
    """Inverse of slip_angle."""
    return math.atan((params.l_f + params.l_r) * math.tan(beta) / params.l_r)


@lru_cache(maxsize=8)
def _matrix_templates(params: VehicleParams):
    T = params.T_s
    A0 = np.array([
        [1.0, 0.0, 0.0, T],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    B0 = np.array([
        [0.0, 0.0],
        [0.0, 0.0],
        [0.0, 0.0],
        [0.0, T],
    ])
    return A0, B0, np.eye(4)


def bicycle_matrices(v: float, params: VehicleParams = VehicleParams()):
    """Discretized matrices (A, B, G, C) linearized at speed v.

    The attack enters through the same channel as the control, so G = B.
    """
    A0, B0, C0 = _matrix_templates(params)
    vT = v * params.T_s
    A = A0.copy()
    A[1, 2] = vT
    B = B0.copy()
    B[1, 0] = vT
    B[2, 0] = vT / params.l_r
    return A, B, B.copy(), C0.copy()


def attack_signal(k: int) -> tuple:
    """Attacker's steering and acceleration injection at step k.

    Steering: zero before step 100, then a 1.1-amplitude slow sinusoid.
    Acceleration: six alternating 100-step blocks of +-3.5 starting at
    step 100 with +3.5, zero from step 700 on.
    """
    if k < 100:
        return 0.0, 0.0
    delta_d = 1.1 * math.sin(0.05 * k)
    if k < 700:
        a_d = 3.5 if (k // 100) % 2 == 1 else -3.5
    else:
        a_d = 0.0
    return delta_d, a_d


def attack_input(k: int, params: VehicleParams = VehicleParams()) -> np.ndarray:
    """Attack expressed in the model's input coordinates (slip angle, accel)."""
    delta_d, a_d = attack_signal(k)
    return np.array([slip_angle(delta_d, params), a_d])


def build_constraints(u, params: VehicleParams = VehicleParams()):
    """Constraint matrices for the attack estimate and the state estimate.

    `u = (delta_u, a_u)` is the nominal control; the attacker's share of
    each actuator budget is what remains after the nominal command:
    |delta_u + delta_d| <= steer_max and |a_u + a_d| <= accel_max.
    Returns (A_in, b_in, B_st, c_st).
    """
    delta_u, a_u = float(u[0]), float(u[1])
    A_in = np.array([
        [1.0, 0.0],
        [-1.0, 0.0],
        [0.0, 1.0],
        [0.0, -1.0],
    ])
    b_in = np.array([
        params.steer_max - delta_u,
        params.steer_max + delta_u,
        params.accel_max - a_u,
        params.accel_max + a_u,
    ])
    B_st = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, -1.0],
    ])
    c_st = np.array([params.x_max, 0.0, params.y_max, 0.0, params.v_max, 0.0])
    return A_in, b_in, B_st, c_st


def vehicle_model(velocity, params: VehicleParams = VehicleParams()) -> SystemModel:
    """SystemModel whose matrices are scheduled on velocity(k)."""
    Q = np.diag(params.q_diag)
    R = np.diag(params.r_diag)
    C = np.eye(4)
    return SystemModel(
        state_dim=4, input_dim=2, attack_dim=2, output_dim=4,
        A=lambda k: bicycle_matrices(velocity(k), params)[0],
        B=lambda k: bicycle_matrices(velocity(k), params)[1],
        C=lambda k: C,
        G=lambda k: bicycle_matrices(velocity(k), params)[2],
        Q=lambda k: Q,
        R=lambda k: R,
    )


def vehicle_constraints(control, params: VehicleParams = VehicleParams()) -> ConstraintSet:
    """ConstraintSet with the input box tracking the nominal control(k)."""
    A_in, _, B_st, c_st = build_constraints((0.0, 0.0), params)
    cache = {}

    def input_bound(k):
        u = control(k)
        key = (float(u[0]), float(u[1]))
        b = cache.get(key)
        if b is None:
            if len(cache) > 64:
                cache.clear()
            b = build_constraints(key, params)[1]
            cache[key] = b
        return b

    return ConstraintSet(
        input_matrix=lambda k: A_in,
        input_bound=input_bound,
        state_matrix=lambda k: B_st,
        state_bound=lambda k: c_st,
    )
