"""Discrete-time benchmark dynamics: 2D car, quadrotor and 7-joint arm.

Every model integrates its continuous dynamics with one explicit Euler step
of length ``dt``.  The unchecked ``f``/``jacobians`` methods broadcast over
leading batch axes and are what the solvers call in their inner loops; the
module-level :func:`step` and :func:`linearize` validate their inputs first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from svto._kernels import car_feedback_rollout


class Linearization(NamedTuple):
    f_x: np.ndarray
    f_u: np.ndarray


@dataclass(frozen=True)
class DynamicsModel:
    """Base class.  Subclasses set ``n_x``, ``n_u`` and implement ``f``/``jacobians``."""

    dt: float
    u_lower: np.ndarray
    u_upper: np.ndarray

    n_x = 0
    n_u = 0
    name = "base"

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        lo = np.asarray(self.u_lower, dtype=float)
        hi = np.asarray(self.u_upper, dtype=float)
        if lo.shape != (self.n_u,) or hi.shape != (self.n_u,):
            raise ValueError(f"control bounds must have shape ({self.n_u},)")
        if not np.all(lo < hi):
            raise ValueError("control lower bounds must be below upper bounds")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "u_lower", lo)
        object.__setattr__(self, "u_upper", hi)

    def f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> Linearization:
        raise NotImplementedError

    def position(self, x: np.ndarray) -> np.ndarray:
        """Cartesian position used by obstacles and the success metric."""
        return x[..., self.position_indices]

    @property
    def position_indices(self) -> tuple[int, ...]:
        raise NotImplementedError

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.u_lower, self.u_upper)

    def feedback_rollout(self, x0, X, U, offsets, K):
        """Closed-loop rollouts ``u_t = U_t + offsets_t + K_t (x_t - X_t)``.

        ``X``, ``U``, ``K`` have a leading mode axis (B, ...); ``offsets`` is
        (B, S, T, n_u).  ``K=None`` drops the feedback term.  Returns states
        (B, S, T+1, n_x) and the applied controls (B, S, T, n_u).
        """
        B, S, T, n_u = offsets.shape
        xs = np.empty((B, S, T + 1, self.n_x))
        us = np.empty((B, S, T, n_u))
        xs[:, :, 0] = x0
        for t in range(T):
            u = U[:, None, t] + offsets[:, :, t]
            if K is not None:
                u = u + (K[:, None, t] @ (xs[:, :, t] - X[:, None, t])[..., None])[..., 0]
            us[:, :, t] = u
            xs[:, :, t + 1] = self.f(xs[:, :, t], u)
        return xs, us

    def rollout(self, x0: np.ndarray, controls: np.ndarray) -> np.ndarray:
        """Propagate ``controls`` of shape (..., T, n_u) from ``x0``; returns (..., T+1, n_x)."""
        T = controls.shape[-2]
        batch = controls.shape[:-2]
        xs = np.empty(batch + (T + 1, self.n_x))
        xs[..., 0, :] = x0
        for t in range(T):
            xs[..., t + 1, :] = self.f(xs[..., t, :], controls[..., t, :])
        return xs


def _check(model: DynamicsModel, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n_x,):
        raise ValueError(f"{model.name}: state must have shape ({model.n_x},), got {x.shape}")
    if u.shape != (model.n_u,):
        raise ValueError(f"{model.name}: control must have shape ({model.n_u},), got {u.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError(f"{model.name}: non-finite state or control")
    return x, u


def step(model: DynamicsModel, x, u) -> np.ndarray:
    """One Euler step ``x_{t+1} = f(x_t, u_t)`` with input validation."""
    x, u = _check(model, x, u)
    return model.f(x, u)


def linearize(model: DynamicsModel, x, u) -> Linearization:
    """Analytic Jacobians of :func:`step` at ``(x, u)``."""
    x, u = _check(model, x, u)
    return model.jacobians(x, u)


@dataclass(frozen=True)
class Car2D(DynamicsModel):
    """Unicycle: state (px, py, heading), control (forward speed, yaw rate)."""

    dt: float = 0.02
    u_lower: np.ndarray = field(default_factory=lambda: np.array([-4.0, -4.0]))
    u_upper: np.ndarray = field(default_factory=lambda: np.array([4.0, 4.0]))

    n_x = 3
    n_u = 2
    name = "car"

    @property
    def position_indices(self) -> tuple[int, ...]:
        return (0, 1)

    def f(self, x, u):
        th = x[..., 2]
        v = u[..., 0]
        xn = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (3,)))
        xn[..., 0] = x[..., 0] + self.dt * v * np.cos(th)
        xn[..., 1] = x[..., 1] + self.dt * v * np.sin(th)
        xn[..., 2] = th + self.dt * u[..., 1]
        return xn

    def jacobians(self, x, u):
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        th = x[..., 2]
        v = u[..., 0]
        c, s = np.cos(th), np.sin(th)
        fx = np.zeros(batch + (3, 3))
        fx[..., 0, 0] = fx[..., 1, 1] = fx[..., 2, 2] = 1.0
        fx[..., 0, 2] = -self.dt * v * s
        fx[..., 1, 2] = self.dt * v * c
        fu = np.zeros(batch + (3, 2))
        fu[..., 0, 0] = self.dt * c
        fu[..., 1, 0] = self.dt * s
        fu[..., 2, 1] = self.dt
        return Linearization(fx, fu)

    def rollout(self, x0, controls):
        U = np.asarray(controls, dtype=float)
        batch = U.shape[:-2]
        U2 = U.reshape((-1,) + U.shape[-2:])
        xs, _ = self.feedback_rollout(x0, np.zeros(U2.shape[:-1] + (3,)), U2, np.zeros_like(U2)[:, None], None)
        return xs[:, 0].reshape(batch + xs.shape[-2:])

    def feedback_rollout(self, x0, X, U, offsets, K):
        use_K = K is not None
        K = K if use_K else np.zeros(U.shape[:-1] + (2, 3))
        return car_feedback_rollout(
            float(self.dt),
            np.ascontiguousarray(x0, dtype=float),
            np.ascontiguousarray(X, dtype=float),
            np.ascontiguousarray(U, dtype=float),
            np.ascontiguousarray(offsets, dtype=float),
            np.ascontiguousarray(K, dtype=float),
            use_K,
        )


@dataclass(frozen=True)
class Quadrotor(DynamicsModel):
    """Rigid-body quadrotor in plus configuration driven by four rotor forces.

    State: position (3), roll/pitch/yaw (3), world-frame velocity (3),
    body angular rates (3).  Rotation is ZYX, ``R = Rz(yaw) Ry(pitch) Rx(roll)``.
    """

    dt: float = 0.01
    u_lower: np.ndarray = field(default_factory=lambda: np.zeros(4))
    u_upper: np.ndarray = field(default_factory=lambda: np.full(4, 6.0))
    mass: float = 1.0
    arm: float = 0.2
    gravity: float = 9.81
    inertia: tuple[float, float, float] = (0.01, 0.01, 0.02)
    yaw_coeff: float = 0.05

    n_x = 12
    n_u = 4
    name = "quadrotor"

    @property
    def position_indices(self) -> tuple[int, ...]:
        return (0, 1, 2)

    @property
    def hover_force(self) -> float:
        return self.mass * self.gravity / 4.0

    @property
    def mixer(self) -> np.ndarray:
        """Maps rotor forces to (thrust, roll torque, pitch torque, yaw torque)."""
        l, c = self.arm, self.yaw_coeff
        return np.array(
            [
                [1.0, 1.0, 1.0, 1.0],
                [0.0, l, 0.0, -l],
                [-l, 0.0, l, 0.0],
                [c, -c, c, -c],
            ]
        )

    def _rates(self, x, u):
        phi, th, psi = x[..., 3], x[..., 4], x[..., 5]
        p, q, r = x[..., 9], x[..., 10], x[..., 11]
        sf, cf = np.sin(phi), np.cos(phi)
        st, ct = np.sin(th), np.cos(th)
        ss, cs = np.sin(psi), np.cos(psi)
        w = u @ self.mixer.T
        thrust = w[..., 0]
        jx, jy, jz = self.inertia
        b3 = np.stack([cf * st * cs + sf * ss, cf * st * ss - sf * cs, cf * ct], axis=-1)
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        xd = np.empty(batch + (12,))
        xd[..., 0:3] = x[..., 6:9]
        tt = st / ct
        xd[..., 3] = p + (q * sf + r * cf) * tt
        xd[..., 4] = q * cf - r * sf
        xd[..., 5] = (q * sf + r * cf) / ct
        xd[..., 6:9] = b3 * (thrust / self.mass)[..., None]
        xd[..., 8] -= self.gravity
        xd[..., 9] = (w[..., 1] + (jy - jz) * q * r) / jx
        xd[..., 10] = (w[..., 2] + (jz - jx) * p * r) / jy
        xd[..., 11] = (w[..., 3] + (jx - jy) * p * q) / jz
        return xd

    def f(self, x, u):
        return x + self.dt * self._rates(x, u)

    def jacobians(self, x, u):
        dt = self.dt
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        phi, th, psi = x[..., 3], x[..., 4], x[..., 5]
        p, q, r = x[..., 9], x[..., 10], x[..., 11]
        sf, cf = np.sin(phi), np.cos(phi)
        st, ct = np.sin(th), np.cos(th)
        ss, cs = np.sin(psi), np.cos(psi)
        tt = st / ct
        thrust = u.sum(axis=-1)
        jx, jy, jz = self.inertia
        a = np.zeros(batch + (12, 12))

        a[..., 0, 6] = a[..., 1, 7] = a[..., 2, 8] = 1.0

        qs_rc = q * sf + r * cf
        qc_rs = q * cf - r * sf
        a[..., 3, 3] = qc_rs * tt
        a[..., 3, 4] = qs_rc / ct**2
        a[..., 3, 9] = 1.0
        a[..., 3, 10] = sf * tt
        a[..., 3, 11] = cf * tt
        a[..., 4, 3] = -qs_rc
        a[..., 4, 10] = cf
        a[..., 4, 11] = -sf
        a[..., 5, 3] = qc_rs / ct
        a[..., 5, 4] = qs_rc * st / ct**2
        a[..., 5, 10] = sf / ct
        a[..., 5, 11] = cf / ct

        k = (thrust / self.mass)[..., None]
        d_phi = np.stack([-sf * st * cs + cf * ss, -sf * st * ss - cf * cs, -sf * ct], axis=-1)
        d_th = np.stack([cf * ct * cs, cf * ct * ss, -cf * st], axis=-1)
        d_psi = np.stack([-cf * st * ss + sf * cs, cf * st * cs + sf * ss, np.zeros_like(phi)], axis=-1)
        a[..., 6:9, 3] = d_phi * k
        a[..., 6:9, 4] = d_th * k
        a[..., 6:9, 5] = d_psi * k

        a[..., 9, 10] = (jy - jz) * r / jx
        a[..., 9, 11] = (jy - jz) * q / jx
        a[..., 10, 9] = (jz - jx) * r / jy
        a[..., 10, 11] = (jz - jx) * p / jy
        a[..., 11, 9] = (jx - jy) * q / jz
        a[..., 11, 10] = (jx - jy) * p / jz

        fx = dt * a
        idx = np.arange(12)
        fx[..., idx, idx] += 1.0

        b3 = np.stack([cf * st * cs + sf * ss, cf * st * ss - sf * cs, cf * ct], axis=-1)
        fu = np.zeros(batch + (12, 4))
        fu[..., 6:9, :] = dt * (b3 / self.mass)[..., :, None]
        inv_j = np.array([1.0 / jx, 1.0 / jy, 1.0 / jz])
        fu[..., 9:12, :] = dt * inv_j[:, None] * self.mixer[1:]
        return Linearization(fx, fu)


def _rot(axis: str, angle: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    if axis == "z":
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
        out[..., 2, 2] = 1.0
    else:
        out[..., 0, 0] = c
        out[..., 0, 2] = s
        out[..., 2, 0] = -s
        out[..., 2, 2] = c
        out[..., 1, 1] = 1.0
    return out


@dataclass(frozen=True)
class Arm7(DynamicsModel):
    """Kinematic 7-joint arm with double-integrator joints.

    State: joint angles (7), joint velocities (7), end-effector position (3).
    Controls are joint accelerations.  Joint axes alternate z, y, z, ...;
    each joint is followed by a link along its local z axis.  The
    end-effector entries are recomputed by forward kinematics every step.
    """

    dt: float = 0.02
    u_lower: np.ndarray = field(default_factory=lambda: np.full(7, -10.0))
    u_upper: np.ndarray = field(default_factory=lambda: np.full(7, 10.0))
    links: tuple[float, ...] = (0.3, 0.3, 0.3, 0.3, 0.2, 0.2, 0.1)

    n_x = 17
    n_u = 7
    name = "arm"

    axes = ("z", "y", "z", "y", "z", "y", "z")

    @property
    def position_indices(self) -> tuple[int, ...]:
        return (14, 15, 16)

    def forward_kinematics(self, q: np.ndarray, with_jacobian: bool = False):
        """End-effector position (and its 3x7 Jacobian) for joint angles ``q``."""
        batch = q.shape[:-1]
        rot = np.broadcast_to(np.eye(3), batch + (3, 3))
        pos = np.zeros(batch + (3,))
        origins, world_axes = [], []
        for i, ax in enumerate(self.axes):
            origins.append(pos)
            world_axes.append(rot[..., :, 2] if ax == "z" else rot[..., :, 1])
            rot = rot @ _rot(ax, q[..., i])
            pos = pos + self.links[i] * rot[..., :, 2]
        if not with_jacobian:
            return pos
        jac = np.empty(batch + (3, 7))
        for i in range(7):
            jac[..., :, i] = np.cross(world_axes[i], pos - origins[i])
        return pos, jac

    def f(self, x, u):
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        xn = np.empty(batch + (17,))
        q_next = x[..., 0:7] + self.dt * x[..., 7:14]
        xn[..., 0:7] = q_next
        xn[..., 7:14] = x[..., 7:14] + self.dt * u
        xn[..., 14:17] = self.forward_kinematics(q_next)
        return xn

    def jacobians(self, x, u):
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        dt = self.dt
        q_next = x[..., 0:7] + dt * x[..., 7:14]
        _, jac = self.forward_kinematics(q_next, with_jacobian=True)
        eye = np.eye(7)
        fx = np.zeros(batch + (17, 17))
        fx[..., 0:7, 0:7] = eye
        fx[..., 0:7, 7:14] = dt * eye
        fx[..., 7:14, 7:14] = eye
        fx[..., 14:17, 0:7] = jac
        fx[..., 14:17, 7:14] = dt * jac
        fu = np.zeros(batch + (17, 7))
        fu[..., 7:14, :] = dt * eye
        return Linearization(fx, fu)

    def initial_state(self, q0: np.ndarray) -> np.ndarray:
        q0 = np.asarray(q0, dtype=float)
        return np.concatenate([q0, np.zeros(7), self.forward_kinematics(q0)])


@dataclass(frozen=True)
class LinearModel(DynamicsModel):
    """``x' = A x + B u``; used as an exactly solvable reference system."""

    A: np.ndarray = field(default_factory=lambda: np.eye(1))
    B: np.ndarray = field(default_factory=lambda: np.eye(1))

    name = "linear"

    def __post_init__(self) -> None:
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[:1] != A.shape[:1]:
            raise ValueError("need square A and B with matching rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        super().__post_init__()

    @property
    def n_x(self) -> int:  # type: ignore[override]
        return self.A.shape[0]

    @property
    def n_u(self) -> int:  # type: ignore[override]
        return self.B.shape[1]

    @property
    def position_indices(self) -> tuple[int, ...]:
        return tuple(range(min(2, self.n_x)))

    def f(self, x, u):
        return x @ self.A.T + u @ self.B.T

    def jacobians(self, x, u):
        batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        return Linearization(
            np.broadcast_to(self.A, batch + self.A.shape).copy(),
            np.broadcast_to(self.B, batch + self.B.shape).copy(),
        )

    @classmethod
    def unbounded(cls, A, B, dt: float = 1.0) -> LinearModel:
        n_u = np.shape(B)[1]
        return cls(dt, np.full(n_u, -np.inf), np.full(n_u, np.inf), A=A, B=B)


MODELS = {"car": Car2D, "quadrotor": Quadrotor, "arm": Arm7}


def make_model(name: str, **params) -> DynamicsModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; expected one of {sorted(MODELS)}") from None
    for key in ("u_lower", "u_upper"):
        if key in params:
            params[key] = np.asarray(params[key], dtype=float)
    return cls(**params)
