"""Conserved state and ideal-gas closure for the 2D Euler solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# index of each conserved variable in ConservedState.U
RHO, MOMX, MOMY, ENERGY, RHOMAT = range(5)


@dataclass
class ConservedState:
    """Cell averages of (rho, rho*u, rho*v, E, rho*mat) on a uniform square grid.

    ``U`` has shape ``(5, Ny, Nx)``; row index is y, column index is x.  The
    material tag ``mat`` is carried as the mass-weighted scalar ``rho*mat`` so
    that it is advected with the flow.
    """

    U: np.ndarray
    dx: float
    gamma: float = 1.4
    c_v: float = 1.0

    @property
    def grid(self):
        return (self.U.shape[2], self.U.shape[1], self.dx, self.dx)

    @property
    def rho(self):
        return self.U[RHO]

    @property
    def mom_x(self):
        return self.U[MOMX]

    @property
    def mom_y(self):
        return self.U[MOMY]

    @property
    def E_tot(self):
        return self.U[ENERGY]

    @property
    def mat(self):
        return self.U[RHOMAT] / self.U[RHO]

    @property
    def internal_energy_density(self):
        U = self.U
        return U[ENERGY] - 0.5 * (U[MOMX] ** 2 + U[MOMY] ** 2) / U[RHO]

    def pressure(self):
        return eos_pressure(self.rho, self.internal_energy_density, self.gamma)

    def copy(self):
        return ConservedState(self.U.copy(), self.dx, self.gamma, self.c_v)

    @classmethod
    def from_primitive(cls, rho, u, v, p, mat, dx, gamma=1.4, c_v=1.0):
        rho = np.asarray(rho, dtype=np.float64)
        U = np.empty((5,) + rho.shape)
        U[RHO] = rho
        U[MOMX] = rho * u
        U[MOMY] = rho * v
        U[ENERGY] = np.asarray(p) / (gamma - 1.0) + 0.5 * rho * (np.asarray(u) ** 2 + np.asarray(v) ** 2)
        U[RHOMAT] = rho * mat
        return cls(U, float(dx), float(gamma), float(c_v))


def eos_pressure(rho, internal_energy_density, gamma=1.4):
    """Ideal-gas pressure ``(gamma - 1) * rho * e`` from the energy per unit volume."""
    return (gamma - 1.0) * np.asarray(internal_energy_density)


def sound_speed(rho, p, gamma=1.4):
    return np.sqrt(gamma * np.asarray(p) / np.asarray(rho))


def temperature(rho, internal_energy_density, c_v=1.0):
    """``T = e / c_v`` with ``e`` the specific internal energy."""
    return np.asarray(internal_energy_density) / np.asarray(rho) / c_v


def porosity_of(rho, rho_solid):
    """Void fraction ``1 - rho / rho_solid``; ``rho`` is clamped to ``[0, rho_solid]``."""
    rho = np.clip(np.asarray(rho, dtype=np.float64), 0.0, rho_solid)
    return 1.0 - rho / rho_solid
