"""Finite-volume update: HLLC fluxes, piecewise-constant states, Heun RK2.

Boundaries are described per edge as ``"reflect"`` (no-flux wall) or
``"outflow"`` (zero gradient).  Edge order is ``(left, right, bottom, top)``
where left/right are the x ends and bottom/top the y ends of the array.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteError, PositivityError
from .state import ENERGY, MOMX, MOMY, RHO, RHOMAT, ConservedState

REFLECT = "reflect"
OUTFLOW = "outflow"

CLOSED_BOX = (REFLECT, REFLECT, REFLECT, REFLECT)
# lattice: free-flow left edge, walls elsewhere
LATTICE_EDGES = (OUTFLOW, REFLECT, REFLECT, REFLECT)


def boundary_edges(kind):
    if kind == "porous":
        return CLOSED_BOX
    if kind == "lattice":
        return LATTICE_EDGES
    raise ValueError(f"unknown geometry kind {kind!r}")


def compute_dt(state, cfl):
    """``cfl * min(dx / (|u| + c))`` over all cells."""
    if not 0.0 < cfl < 1.0:
        raise ValueError(f"cfl must lie in (0, 1), got {cfl}")
    rho = state.rho
    speed = np.hypot(state.mom_x, state.mom_y) / rho
    p = state.pressure()
    with np.errstate(invalid="ignore"):
        c = np.sqrt(state.gamma * p / rho)
    wave = speed + c
    if not np.all(np.isfinite(wave)):
        raise NonFiniteError("non-finite wave speed in compute_dt")
    return cfl * state.dx / float(wave.max())


def apply_boundary(U, edges):
    """Fill the one-cell ghost layer of a padded ``(5, Ny+2, Nx+2)`` array in place."""
    left, right, bottom, top = edges
    U[:, :, 0] = U[:, :, 1]
    U[:, :, -1] = U[:, :, -2]
    if left == REFLECT:
        U[MOMX, :, 0] = -U[MOMX, :, 1]
    if right == REFLECT:
        U[MOMX, :, -1] = -U[MOMX, :, -2]
    U[:, 0, :] = U[:, 1, :]
    U[:, -1, :] = U[:, -2, :]
    if bottom == REFLECT:
        U[MOMY, 0, :] = -U[MOMY, 1, :]
    if top == REFLECT:
        U[MOMY, -1, :] = -U[MOMY, -2, :]
    return U


def pad_state(U, edges):
    padded = np.empty((U.shape[0], U.shape[1] + 2, U.shape[2] + 2))
    padded[:, 1:-1, 1:-1] = U
    return apply_boundary(padded, edges)


def hllc_flux(rhoL, unL, utL, pL, EL, YL, rhoR, unR, utR, pR, ER, YR, gamma):
    """HLLC flux normal to a face; returns (mass, normal mom, tangential mom, energy, mass*mat).

    Signal speeds follow Einfeldt (Roe-averaged bounds), which keeps the
    intermediate states positive.
    """
    cL = np.sqrt(gamma * pL / rhoL)
    cR = np.sqrt(gamma * pR / rhoR)
    sL_, sR_ = np.sqrt(rhoL), np.sqrt(rhoR)
    inv = 1.0 / (sL_ + sR_)
    u_roe = (sL_ * unL + sR_ * unR) * inv
    v_roe = (sL_ * utL + sR_ * utR) * inv
    H_roe = (sL_ * (EL + pL) / rhoL + sR_ * (ER + pR) / rhoR) * inv
    c_roe = np.sqrt(np.maximum((gamma - 1.0) * (H_roe - 0.5 * (u_roe**2 + v_roe**2)), 0.0))
    SL = np.minimum(unL - cL, u_roe - c_roe)
    SR = np.maximum(unR + cR, u_roe + c_roe)

    mL = rhoL * (SL - unL)
    mR = rhoR * (SR - unR)
    SM = (pR - pL + mL * unL - mR * unR) / (mL - mR)

    # physical fluxes
    fL = (rhoL * unL, rhoL * unL * unL + pL, rhoL * unL * utL, (EL + pL) * unL, rhoL * unL * YL)
    fR = (rhoR * unR, rhoR * unR * unR + pR, rhoR * unR * utR, (ER + pR) * unR, rhoR * unR * YR)
    uL = (rhoL, rhoL * unL, rhoL * utL, EL, rhoL * YL)
    uR = (rhoR, rhoR * unR, rhoR * utR, ER, rhoR * YR)

    def star(rho, un, ut, p, E, Y, S, m):
        k = m / (S - SM)
        return (
            k,
            k * SM,
            k * ut,
            k * (E / rho + (SM - un) * (SM + p / m)),
            k * Y,
        )

    with np.errstate(divide="ignore", invalid="ignore"):
        usL = star(rhoL, unL, utL, pL, EL, YL, SL, mL)
        usR = star(rhoR, unR, utR, pR, ER, YR, SR, mR)

    out = []
    for q in range(5):
        f_star_L = fL[q] + SL * (usL[q] - uL[q])
        f_star_R = fR[q] + SR * (usR[q] - uR[q])
        f = np.where(SL >= 0.0, fL[q], np.where(SM >= 0.0, f_star_L, np.where(SR > 0.0, f_star_R, fR[q])))
        out.append(f)
    return out


def _primitives(P, gamma):
    rho = P[RHO]
    u = P[MOMX] / rho
    v = P[MOMY] / rho
    p = (gamma - 1.0) * (P[ENERGY] - 0.5 * rho * (u * u + v * v))
    Y = P[RHOMAT] / rho
    return rho, u, v, p, P[ENERGY], Y


def residual(U, dx, gamma, edges):
    """``dU/dt`` of the semi-discrete scheme for interior array ``U``."""
    P = pad_state(U, edges)
    rho, u, v, p, E, Y = _primitives(P, gamma)

    # x faces: (Ny, Nx+1)
    sl = (slice(1, -1), slice(None, -1))
    sr = (slice(1, -1), slice(1, None))
    fm, fn, ft, fe, fy = hllc_flux(
        rho[sl], u[sl], v[sl], p[sl], E[sl], Y[sl],
        rho[sr], u[sr], v[sr], p[sr], E[sr], Y[sr], gamma,
    )
    Fx = np.stack([fm, fn, ft, fe, fy])
    _close_walls(Fx, edges[0], edges[1], axis=2, normal=MOMX)

    # y faces: (Ny+1, Nx); normal velocity is v
    sb = (slice(None, -1), slice(1, -1))
    st = (slice(1, None), slice(1, -1))
    gm, gn, gt, ge, gy = hllc_flux(
        rho[sb], v[sb], u[sb], p[sb], E[sb], Y[sb],
        rho[st], v[st], u[st], p[st], E[st], Y[st], gamma,
    )
    Fy = np.stack([gm, gt, gn, ge, gy])
    _close_walls(Fy, edges[2], edges[3], axis=1, normal=MOMY)

    return -(np.diff(Fx, axis=2) + np.diff(Fy, axis=1)) / dx


def _close_walls(F, low, high, axis, normal):
    # a wall passes only the normal pressure force
    for edge, idx in ((low, 0), (high, -1)):
        if edge != REFLECT:
            continue
        face = [slice(None)] * 3
        face[axis] = idx
        saved = F[tuple([normal] + face[1:])].copy()
        F[tuple(face)] = 0.0
        F[tuple([normal] + face[1:])] = saved


def check_positive(U, gamma, where="update"):
    rho = U[RHO]
    eint = U[ENERGY] - 0.5 * (U[MOMX] ** 2 + U[MOMY] ** 2) / rho
    if not (np.all(np.isfinite(U)) and np.all(rho > 0.0) and np.all(eint > 0.0)):
        raise PositivityError(f"positivity failure after {where}")


def step(state, dt, edges=CLOSED_BOX):
    """One Heun (SSP-RK2) step; returns a new state.

    Raises :class:`PositivityError` if density or pressure turns non-positive.
    """
    U0 = state.U
    g = state.gamma
    U1 = U0 + dt * residual(U0, state.dx, g, edges)
    check_positive(U1, g, "first stage")
    U2 = 0.5 * U0 + 0.5 * (U1 + dt * residual(U1, state.dx, g, edges))
    check_positive(U2, g, "second stage")
    return ConservedState(U2, state.dx, g, state.c_v)


def advance(state, dt, edges=CLOSED_BOX, max_halvings=5):
    """Advance by ``dt`` with up to ``max_halvings`` retries at half the step.

    A halved retry covers the full ``dt`` with ``2**k`` substeps.
    """
    for k in range(max_halvings + 1):
        n_sub = 2**k
        try:
            s = state
            for _ in range(n_sub):
                s = step(s, dt / n_sub, edges)
            return s
        except PositivityError:
            continue
    raise PositivityError(f"positivity failure persisted after {max_halvings} dt halvings")
