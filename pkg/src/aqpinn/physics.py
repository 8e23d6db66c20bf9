"""Incompressible Navier-Stokes residuals, vorticity and exact solutions.

Everything here is plain arithmetic, so the functions accept floats, numpy
arrays, or tape Vars interchangeably.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class FluidConstants:
    rho: float = 1.0
    nu: float = 0.01

    def __post_init__(self):
        if not (self.rho > 0 and self.nu > 0):
            raise ConfigurationError(f"rho and nu must be positive, got rho={self.rho}, nu={self.nu}")


@dataclass
class FlowDerivatives:
    u: object
    v: object
    p: object
    u_t: object
    u_x: object
    u_y: object
    u_xx: object
    u_yy: object
    v_t: object
    v_x: object
    v_y: object
    v_xx: object
    v_yy: object
    p_x: object
    p_y: object

    def check_finite(self):
        for f in fields(self):
            val = getattr(self, f.name)
            data = getattr(val, "data", val)
            if not np.all(np.isfinite(data)):
                raise DataError(f"non-finite {f.name}")
        return self


@dataclass
class Residuals:
    f_x: object
    f_y: object
    c: object


def ns_residuals(d: FlowDerivatives, k: FluidConstants = FluidConstants()) -> Residuals:
    """Momentum residuals (f_x, f_y) and continuity residual c."""
    f_x = d.u_t + d.u * d.u_x + d.v * d.u_y + d.p_x * (1.0 / k.rho) - (d.u_xx + d.u_yy) * k.nu
    f_y = d.v_t + d.u * d.v_x + d.v * d.v_y + d.p_y * (1.0 / k.rho) - (d.v_xx + d.v_yy) * k.nu
    c = d.u_x + d.v_y
    return Residuals(f_x, f_y, c)


def vorticity(d: FlowDerivatives):
    return d.v_x - d.u_y


def streamfunction_velocities(psi_x, psi_y):
    """u = dpsi/dy, v = -dpsi/dx."""
    return psi_y, -psi_x


def taylor_green(x, y, t, nu, rho=1.0):
    """Decaying Taylor-Green vortex, an exact solution on the 2*pi-periodic box."""
    decay = np.exp(-2.0 * nu * t)
    u = -np.cos(x) * np.sin(y) * decay
    v = np.sin(x) * np.cos(y) * decay
    p = -(rho / 4.0) * (np.cos(2 * x) + np.cos(2 * y)) * decay ** 2
    return u, v, p


def taylor_green_derivatives(x, y, t, nu, rho=1.0) -> FlowDerivatives:
    """Closed-form partials of :func:`taylor_green`."""
    e = np.exp(-2.0 * nu * t)
    cx, sx, cy, sy = np.cos(x), np.sin(x), np.cos(y), np.sin(y)
    u, v, p = taylor_green(x, y, t, nu, rho)
    return FlowDerivatives(
        u=u, v=v, p=p,
        u_t=2.0 * nu * cx * sy * e,
        u_x=sx * sy * e,
        u_y=-cx * cy * e,
        u_xx=cx * sy * e,
        u_yy=cx * sy * e,
        v_t=-2.0 * nu * sx * cy * e,
        v_x=cx * cy * e,
        v_y=-sx * sy * e,
        v_xx=-sx * cy * e,
        v_yy=-sx * cy * e,
        p_x=(rho / 2.0) * np.sin(2 * x) * e ** 2,
        p_y=(rho / 2.0) * np.sin(2 * y) * e ** 2,
    )


def uniform_flow_derivatives(speed=1.0, pressure=0.0, shape=()) -> FlowDerivatives:
    z = np.zeros(shape)
    return FlowDerivatives(z + speed, z, z + pressure, *([z] * 12))


def rest_derivatives(pressure=0.0, shape=()) -> FlowDerivatives:
    return uniform_flow_derivatives(0.0, pressure, shape)
