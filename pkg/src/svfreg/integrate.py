"""Stationary-velocity-field integration: exp(v) as a displacement field.

Three integrators are provided:

* ``exp_ss``   -- scaling and squaring: start from ``u = v / 2**T`` (a
  near-identity map) and square the map ``T`` times via composition.
* ``exp_euler`` -- fixed-step quadrature: ``u += (1/N) * v(p + u)``, N times.
* ``exp_rk4``  -- classical 4th-order Runge-Kutta on ``dphi/dt = v(phi)``.

The inverse deformation is the exponential of the negated velocity.

Boundary note: compositions clamp to the grid edge, so trajectories that
leave the domain are not modelled consistently by any of the integrators;
equivalence checks should exclude a margin near the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, VectorField
from .transform import _compose_raw, _corner_data, _gather, _lattice, _point_grad, _scatter

__all__ = [
    "IntegratorConfig",
    "exp_ss",
    "exp_euler",
    "exp_rk4",
    "invert",
    "integrate_velocity",
]

_METHODS = ("scaling_squaring", "euler", "rk4")


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration method and step count (squarings for scaling_squaring,
    substeps for euler/rk4)."""

    method: str = "scaling_squaring"
    steps: int = 7

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.method == "scaling_squaring" and self.steps > 16:
            raise ValueError("scaling_squaring steps capped at 16")


def _velocity2d(v: VectorField) -> np.ndarray:
    return v.vectors.reshape(-1, 3).astype(np.float64)


def exp_ss(v: VectorField, T: int) -> VectorField:
    """Scaling-and-squaring exponential.

    ``u <- v / 2**T`` followed by ``u <- u o u`` repeated ``T`` times.
    ``T = 0`` is permitted and returns the raw velocity as a displacement
    (zero squarings), which is useful when studying the effect of ``T``.
    """
    if T < 0 or T > 16:
        raise ValueError("T must be in [0, 16]")
    u = _exp_ss_raw(v.grid.dims, _velocity2d(v), T)
    return VectorField(v.grid, u.reshape(v.grid.dims + (3,)).astype(v.vectors.dtype))


def _exp_ss_raw(dims, v2: np.ndarray, T: int) -> np.ndarray:
    u = v2 / (2.0**T)
    for _ in range(T):
        u = _compose_raw(dims, u, u)
    return u


def exp_euler(v: VectorField, N: int) -> VectorField:
    """Fixed-step quadrature of the flow: u += (1/N) * v(p + u), N times."""
    if N < 1:
        raise ValueError("N must be >= 1")
    dims = v.grid.dims
    v2 = _velocity2d(v)
    p = _lattice(dims)
    u = np.zeros_like(v2)
    h = 1.0 / N
    for _ in range(N):
        idx, w = _corner_data(dims, p + u)
        u = u + h * _gather(v2, idx, w)
    return VectorField(v.grid, u.reshape(dims + (3,)).astype(v.vectors.dtype))


def exp_rk4(v: VectorField, N: int) -> VectorField:
    """Classical RK4 on dphi/dt = v(phi) over t in [0, 1] with N substeps."""
    if N < 1:
        raise ValueError("N must be >= 1")
    dims = v.grid.dims
    v2 = _velocity2d(v)
    p = _lattice(dims)

    def vel(pos):
        idx, w = _corner_data(dims, pos)
        return _gather(v2, idx, w)

    u = np.zeros_like(v2)
    h = 1.0 / N
    for _ in range(N):
        pos = p + u
        k1 = vel(pos)
        k2 = vel(pos + 0.5 * h * k1)
        k3 = vel(pos + 0.5 * h * k2)
        k4 = vel(pos + h * k3)
        u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return VectorField(v.grid, u.reshape(dims + (3,)).astype(v.vectors.dtype))


def integrate_velocity(v: VectorField, cfg: IntegratorConfig) -> VectorField:
    """Dispatch to the configured integrator."""
    if cfg.method == "scaling_squaring":
        return exp_ss(v, cfg.steps)
    if cfg.method == "euler":
        return exp_euler(v, cfg.steps)
    return exp_rk4(v, cfg.steps)


def invert(v: VectorField, cfg: IntegratorConfig) -> VectorField:
    """Displacement of the inverse deformation: the exponential of ``-v``."""
    neg = VectorField(v.grid, -v.vectors)
    return integrate_velocity(neg, cfg)


# -- differentiable scaling-and-squaring (used by the optimizer) ------------
#
# Each squaring u' = u + u(p + u) is differentiated through both roles of u:
# the sampled field (a weighted-corner scatter) and the sampling location
# (the interpolant's spatial Jacobian), plus the direct identity path.


def _exp_ss_tape(dims, z2: np.ndarray, T: int):
    """Forward pass keeping the pre-squaring fields for the backward pass."""
    u = z2 / (2.0**T)
    tape = []
    for _ in range(T):
        tape.append(u)
        u = _compose_raw(dims, u, u)
    return u, tape


def _square_adjoint(dims, u2: np.ndarray, g: np.ndarray) -> np.ndarray:
    q = _lattice(dims) + u2
    idx, w, dw = _corner_data(dims, q, with_grad=True)
    out = g + _scatter(u2.shape[0], idx, w, g)
    out += _point_grad(u2, idx, dw, g)
    return out


def _exp_ss_backward(dims, tape, g: np.ndarray, T: int) -> np.ndarray:
    """Pull a gradient w.r.t. exp_ss output back to the velocity."""
    for u_prev in reversed(tape):
        g = _square_adjoint(dims, u_prev, g)
    return g / (2.0**T)
