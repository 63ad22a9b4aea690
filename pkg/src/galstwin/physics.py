"""Continuous-time plant models: two-link planar robot under PD control,
induction-motor instantaneous power, and conveyor-belt transport."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .kernel import ModelBlock, ONE, Tick
from .reactive import ROBOT_INPUTS, ROBOT_OUTPUTS

SQRT3_2 = math.sqrt(3.0) / 2.0
DEFAULT_DT = 1e-3


class SingularInertia(ArithmeticError):
    pass


class NonFinite(ArithmeticError):
    pass


@dataclass(frozen=True)
class RobotParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    r1: float = 0.5
    r2: float = 0.5
    I1: float = 0.0
    I2: float = 0.0

    def __post_init__(self):
        for k in ("m1", "m2", "l1", "l2", "r1", "r2"):
            if not getattr(self, k) > 0:
                raise ValueError(f"robot parameter {k} must be > 0")
        if self.I1 < 0 or self.I2 < 0:
            raise ValueError("moments of inertia must be >= 0")
        if self.r1 > self.l1 or self.r2 > self.l2:
            raise ValueError("centre-of-mass distance exceeds link length")


@dataclass(frozen=True)
class RobotState:
    theta1: float = 0.0
    theta2: float = 0.0
    omega1: float = 0.0
    omega2: float = 0.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.theta1, self.theta2, self.omega1, self.omega2)


@dataclass(frozen=True)
class PdGains:
    kp1: float = 100.0
    kp2: float = 100.0
    kd1: float = 20.0
    kd2: float = 20.0
    ref1: float = 0.0
    ref2: float = 0.0

    def __post_init__(self):
        if min(self.kp1, self.kp2, self.kd1, self.kd2) < 0:
            raise ValueError("PD gains must be >= 0")

    def with_reference(self, ref1: float, ref2: float) -> "PdGains":
        return PdGains(self.kp1, self.kp2, self.kd1, self.kd2, ref1, ref2)


@dataclass(frozen=True)
class RampFault:
    """Torque drift k*(t - t0) added after the onset, per joint."""

    onset: float
    rate: tuple[float, float] = (0.1, 0.1)

    def __post_init__(self):
        if self.onset < 0:
            raise ValueError("fault onset must be >= 0")

    def drift(self, t: float) -> tuple[float, float]:
        if t < self.onset:
            return 0.0, 0.0
        dt = t - self.onset
        return self.rate[0] * dt, self.rate[1] * dt


# ---------------------------------------------------------------- robot dynamics
def inertia_matrix(p: RobotParams, theta2: float) -> np.ndarray:
    c2 = math.cos(theta2)
    b = p.m2 * p.l1 * p.r2
    b22 = p.I2 + p.m2 * p.r2 ** 2
    b12 = b22 + b * c2
    b11 = p.I1 + p.I2 + p.m1 * p.r1 ** 2 + p.m2 * (p.l1 ** 2 + p.r2 ** 2) + 2 * b * c2
    return np.array([[b11, b12], [b12, b22]])


def coriolis(p: RobotParams, theta2: float, omega1: float, omega2: float) -> np.ndarray:
    h = p.m2 * p.l1 * p.r2 * math.sin(theta2)
    return np.array([-h * omega2 * omega1 - h * (omega1 + omega2) * omega2,
                     h * omega1 * omega1])


def pd_torque(g: PdGains, s: Sequence[float]) -> tuple[float, float]:
    th1, th2, w1, w2 = s
    return (g.kp1 * (g.ref1 - th1) - g.kd1 * w1,
            g.kp2 * (g.ref2 - th2) - g.kd2 * w2)


def kinetic_energy(p: RobotParams, s: Sequence[float]) -> float:
    B = inertia_matrix(p, s[1])
    w = np.array([s[2], s[3]])
    return 0.5 * float(w @ B @ w)


def closed_loop_derivatives(p: RobotParams, g: PdGains, s: RobotState | Sequence[float],
                            fault: RampFault | None = None, t: float = 0.0,
                            literal: bool = False) -> tuple[float, float, float, float]:
    """State derivative under PD control, optionally with a ramp torque fault.

    Default: theta_dd = B^-1 (u - C).  ``literal=True`` uses the variant
    theta_dd = B^-1(-C) + u, which adds the torque as an acceleration; it
    is kept for comparison only.
    """
    th1, th2, w1, w2 = s.as_tuple() if isinstance(s, RobotState) else s
    c2, s2 = math.cos(th2), math.sin(th2)
    b = p.m2 * p.l1 * p.r2
    b22 = p.I2 + p.m2 * p.r2 * p.r2
    b12 = b22 + b * c2
    b11 = p.I1 + p.I2 + p.m1 * p.r1 * p.r1 + p.m2 * (p.l1 * p.l1 + p.r2 * p.r2) + 2.0 * b * c2
    det = b11 * b22 - b12 * b12
    if det <= 1e-12:
        raise SingularInertia(f"det B = {det:g}")
    h = b * s2
    cc1 = -h * w2 * w1 - h * (w1 + w2) * w2
    cc2 = h * w1 * w1
    u1 = g.kp1 * (g.ref1 - th1) - g.kd1 * w1
    u2 = g.kp2 * (g.ref2 - th2) - g.kd2 * w2
    if fault is not None and t >= fault.onset:
        d1, d2 = fault.drift(t)
        u1 += d1
        u2 += d2
    if literal:
        a1 = (b22 * -cc1 - b12 * -cc2) / det + u1
        a2 = (-b12 * -cc1 + b11 * -cc2) / det + u2
    else:
        f1, f2 = u1 - cc1, u2 - cc2
        a1 = (b22 * f1 - b12 * f2) / det
        a2 = (-b12 * f1 + b11 * f2) / det
    return (w1, w2, a1, a2)


def rk4_step(f: Callable[[Sequence[float], float], Sequence[float]],
             s: Sequence[float], t: float, dt: float) -> tuple[float, ...]:
    """Classical fourth-order Runge-Kutta step for ds/dt = f(s, t)."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if isinstance(s, RobotState):
        s = s.as_tuple()
    h2 = dt / 2.0
    k1 = f(s, t)
    k2 = f([x + h2 * k for x, k in zip(s, k1)], t + h2)
    k3 = f([x + h2 * k for x, k in zip(s, k2)], t + h2)
    k4 = f([x + dt * k for x, k in zip(s, k3)], t + dt)
    out = tuple(x + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
                for x, a, b, c, d in zip(s, k1, k2, k3, k4))
    for v in out:
        if not math.isfinite(v):
            raise NonFinite(f"integration diverged at t={t + dt:g}")
    return out


def integrate_robot(p: RobotParams, g: PdGains, s: Sequence[float], t0: float,
                    duration: float, fault: RampFault | None = None,
                    dt: float = DEFAULT_DT, literal: bool = False) -> tuple[float, ...]:
    """Fixed-step RK4 over ``duration`` using substeps no longer than ``dt``."""
    steps = max(1, math.ceil(duration / dt - 1e-9))
    h = duration / steps

    def f(x, t):
        return closed_loop_derivatives(p, g, x, fault, t, literal)

    s = tuple(s)
    for i in range(steps):
        s = rk4_step(f, s, t0 + i * h, h)
    return s


def forward_kinematics(p: RobotParams, theta1: float, theta2: float) -> tuple[float, float]:
    return (p.l1 * math.cos(theta1) + p.l2 * math.cos(theta1 + theta2),
            p.l1 * math.sin(theta1) + p.l2 * math.sin(theta1 + theta2))


class RobotModel(ModelBlock):
    """High-fidelity robot: PD-controlled dynamics integrated each tick.

    Moves latch new reference angles.  When measured joint states arrive
    (closed-loop feedback from the plant) the reported torque is the PD
    command for the measured state; otherwise for the model's own state.
    """

    inputs = ROBOT_INPUTS
    outputs = ROBOT_OUTPUTS

    def __init__(self, name: str, params: RobotParams, gains: PdGains,
                 initial: tuple[float, float] = (0.0, 0.0), period: float = 0.01,
                 epsilon: float = 0.01, dt: float = DEFAULT_DT, literal: bool = False):
        self.name = name
        self.params = params
        self.gains = gains.with_reference(*initial)
        self.initial = tuple(initial)
        self.period = period
        self.epsilon = epsilon
        self.dt = dt
        self.literal = literal

    def initial_state(self):
        # (mode, gains, state tuple)
        return ("idle", self.gains, (self.initial[0], self.initial[1], 0.0, 0.0))

    def react(self, state, tick, inputs):
        mode, gains, s = state
        move1 = inputs["move1"].status is ONE
        move2 = inputs["move2"].status is ONE
        if (move1 or move2) and mode == "idle":
            mode = "conv" if move1 else "asm"
            r1 = inputs["ref1"].value if inputs["ref1"].status is ONE else gains.ref1
            r2 = inputs["ref2"].value if inputs["ref2"].status is ONE else gains.ref2
            gains = gains.with_reference(r1, r2)
        emits: dict[str, float | None] = {"theta1": s[0], "theta2": s[1]}
        meas = [inputs[k] for k in ("meas_theta1", "meas_theta2", "meas_omega1", "meas_omega2")]
        if all(m.status is ONE for m in meas):
            tau = pd_torque(gains, [m.value for m in meas])
        else:
            tau = pd_torque(gains, s)
        emits["tau1"], emits["tau2"] = tau
        if mode != "idle" and abs(s[0] - gains.ref1) < self.epsilon \
                and abs(s[1] - gains.ref2) < self.epsilon:
            emits["reached1" if mode == "conv" else "reached2"] = None
            mode = "idle"
        nxt = integrate_robot(self.params, gains, s, tick.r, self.period, dt=self.dt,
                              literal=self.literal)
        return emits, (mode, gains, nxt)


# ---------------------------------------------------------------- conveyor belt
@dataclass(frozen=True)
class Harmonic:
    m: int
    i_ec1: float
    phi_ec1: float = 0.0
    i_ec2: float = 0.0
    phi_ec2: float = 0.0


@dataclass(frozen=True)
class ConveyorParams:
    um: float = 400.0
    im: float = 5.0
    omega1: float = 2 * math.pi * 60
    phi: float = 0.0
    omega_r: float = 2 * math.pi * 30
    harmonics: tuple[Harmonic, ...] = ()
    m_max: int | None = None

    def __post_init__(self):
        if self.harmonics and self.m_max is not None and \
                self.m_max < max(h.m for h in self.harmonics):
            raise ValueError("m_max below the largest harmonic order")

    @property
    def healthy(self) -> bool:
        return not self.harmonics

    @property
    def nominal_power(self) -> float:
        """Mean power of the healthy motor."""
        return SQRT3_2 * self.um * self.im * math.cos(self.phi)


def eccentricity_harmonics(im: float, orders=(1, 2, 3), fraction: float = 0.05,
                           phase: float = 0.0) -> tuple[Harmonic, ...]:
    return tuple(Harmonic(m, fraction * im, phase, fraction * im, phase) for m in orders)


def conveyor_power(p: ConveyorParams, t):
    """Instantaneous three-phase power with rotor-eccentricity sidebands.

    Accepts a scalar time or a numpy array of times.
    """
    vec = isinstance(t, np.ndarray)
    cos = np.cos if vec else math.cos
    w1, wr = p.omega1, p.omega_r
    total = p.um * p.im * (cos(2 * w1 * t - p.phi) + math.cos(p.phi))
    for h in p.harmonics:
        if p.m_max is not None and h.m > p.m_max:
            continue
        m = h.m
        total = total + p.um * h.i_ec1 * (cos((2 * w1 - m * wr) * t - h.phi_ec1)
                                          + cos(m * wr * t + h.phi_ec1))
        total = total + p.um * h.i_ec2 * (cos((2 * w1 + m * wr) * t - h.phi_ec2)
                                          + cos(m * wr * t - h.phi_ec2))
    return SQRT3_2 * total


def lowpass(p_filtered: float, p: float, dt: float, tau: float = 0.1) -> float:
    """First-order low-pass update (exact discretisation)."""
    a = 1.0 - math.exp(-dt / tau)
    return p_filtered + a * (p - p_filtered)


def belt_speed(p_filtered: float, p0: float, v0: float) -> float:
    if not (p0 > 0 and v0 > 0):
        raise ValueError("nominal power and speed must be > 0")
    return min(max(v0 * p_filtered / p0, 0.0), 2.0 * v0)


def belt_step(p_filtered: float, p0: float, v0: float, positions: Sequence[float],
              dt: float) -> tuple[float, ...]:
    """Advance workpiece positions at the power-scaled belt speed."""
    v = belt_speed(p_filtered, p0, v0)
    return tuple(x + v * dt for x in positions)


SENSOR_TOL = 1e-9


class ConveyorModel(ModelBlock):
    """Belt carrying workpieces past position sensors.

    ``load`` places a workpiece at position 0.  A sensor output fires on
    the tick a workpiece first reaches its coordinate; workpieces leave the
    belt after the furthest sensor.
    """

    inputs = ("load",)

    def __init__(self, name: str, params: ConveyorParams, v0: float = 0.5,
                 sensors: Mapping[str, float] | None = None, period: float = 0.01,
                 dt: float = DEFAULT_DT, tau: float = 0.1):
        self.name = name
        self.params = params
        self.v0 = v0
        self.sensors = dict(sensors or {"ready": 1.0})
        self.period = period
        self.dt = dt
        self.tau = tau
        self.p0 = params.nominal_power
        self.outputs = ("power", "speed", *self.sensors)
        self._end = max(self.sensors.values())
        self._sensor_items = sorted(self.sensors.items(), key=lambda kv: (kv[1], kv[0]))

    def initial_state(self):
        return (self.p0, ())

    def react(self, state, tick, inputs):
        pf, positions = state
        if inputs["load"].status is ONE:
            positions = positions + (0.0,)
        steps = max(1, math.ceil(self.period / self.dt - 1e-9))
        h = self.period / steps
        fired = set()
        p = 0.0
        for i in range(steps):
            p = conveyor_power(self.params, tick.r + i * h)
            pf = lowpass(pf, p, h, self.tau)
            new = belt_step(pf, self.p0, self.v0, positions, h)
            for old, x in zip(positions, new):
                for name, at in self._sensor_items:
                    if old < at - SENSOR_TOL <= x:
                        fired.add(name)
            positions = tuple(x for x in new if x < self._end - SENSOR_TOL)
        emits: dict[str, float | None] = {"power": p, "speed": belt_speed(pf, self.p0, self.v0)}
        for name in fired:
            emits[name] = None
        return emits, (pf, positions)
