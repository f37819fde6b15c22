"""Independent reference values used by the tests.

Nothing here imports the package: the radial ground state is obtained by
shooting on the ODE, the hydrogen numbers are closed forms, and the free-energy
identities follow from the virial and Euler--Lagrange relations.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp

# Frozen results of ``shoot_ground_state(1.5)`` (recomputed and compared in
# test_oracles.py): Q(0) and M_Q = ∫Q^2 for -ΔQ + Q - Q^2 = 0 in R^3.
Q0_P32 = 4.191683
MASS_Q_P32 = 130.9807

HYDROGEN_ENERGY = -0.25  # -Δ - 1/|x|, ground state e^{-r/2}


def hydrogen_level(m: int) -> float:
    """``-1/(4 m^2)`` for ``-Δ - 1/|x|`` (principal quantum number ``m``)."""
    return -1.0 / (4.0 * m * m)


def hydrogen_orbital(r: np.ndarray) -> np.ndarray:
    """Normalised ground state ``(8 pi)^(-1/2) e^{-r/2}``."""
    return np.exp(-0.5 * r) / math.sqrt(8.0 * math.pi)


def _profile_rhs(p):
    def rhs(r, y):
        q, dq = y
        nl = np.sign(q) * abs(q) ** (2.0 * p - 1.0)
        return [dq, q - nl - 2.0 * dq / r]
    return rhs


def _shoot(p: float, q0: float, r_max: float):
    """Integrate from the origin; returns the solution and its exit reason.

    +1: overshoot (crosses zero); -1: undershoot (turns back up while positive).
    """
    r0 = 1e-6
    # series start: Q(r) ≈ q0 + (q0 - q0^(2p-1)) r^2 / 6
    c = (q0 - q0 ** (2.0 * p - 1.0)) / 6.0
    y0 = [q0 + c * r0 * r0, 2.0 * c * r0]

    def crossed(r, y):
        return y[0]
    crossed.terminal = True
    crossed.direction = -1

    def turned(r, y):
        return y[1]
    turned.terminal = True
    turned.direction = 1

    sol = solve_ivp(_profile_rhs(p), (r0, r_max), y0, events=(crossed, turned),
                    rtol=1e-11, atol=1e-13, dense_output=True)
    if sol.t_events[0].size:
        return sol, 1
    if sol.t_events[1].size:
        return sol, -1
    return sol, 0


def shoot_ground_state(p: float, bracket=(1.0, 20.0), r_max: float = 40.0, steps: int = 60):
    """Bisection on ``Q(0)`` for the positive decaying radial solution.

    Returns ``(q0, mass, r_end, interp)`` where ``interp(r)`` evaluates the
    profile on ``[0, r_end]`` (zero beyond, where the shot was cut).
    """
    lo, hi = bracket
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        _, kind = _shoot(p, mid, r_max)
        if kind == 1:
            hi = mid
        else:
            lo = mid
    q0 = 0.5 * (lo + hi)
    sol, _ = _shoot(p, lo, r_max)
    r_end = float(sol.t[-1])
    # trust the shot only while the profile is still decreasing and positive
    rr = np.linspace(sol.t[0], r_end, 20001)
    q = sol.sol(rr)[0]
    cut = int(np.argmin(q)) if np.any(np.diff(q) > 0) else q.size - 1
    rr, q = rr[: cut + 1], np.maximum(q[: cut + 1], 0.0)
    mass = float(4.0 * math.pi * np.trapezoid(q * q * rr * rr, rr))

    def interp(r):
        r = np.asarray(r, dtype=float)
        out = np.interp(r, rr, q, left=q0, right=0.0)
        return out
    return q0, mass, float(rr[-1]), interp


def free_scaling(p: float, mass_q: float):
    """``k`` with ``u(x) = k^(1/(p-1)) Q(kx)`` of unit mass, and ``mu = -k^2``."""
    theta = 3.0 * (p - 1.0)
    k = mass_q ** (-(p - 1.0) / (2.0 - theta))
    return k, -k * k


def free_energy_from_mu(p: float, mu: float) -> float:
    """``E = mu (theta - 2)/(theta - 2p)`` for the unit-mass free minimiser.

    From the virial identity ``2K = theta P/p`` and ``K - P = mu``.
    """
    theta = 3.0 * (p - 1.0)
    return mu * (theta - 2.0) / (theta - 2.0 * p)


def free_scaling_exponent(p: float) -> float:
    """``J_alpha = alpha^e J_1`` with ``e = 4(p-1)/(2-3(p-1))``."""
    return 4.0 * (p - 1.0) / (2.0 - 3.0 * (p - 1.0))


def gaussian_overlap(d: float, sigma: float) -> float:
    """``∫ g(x) g(x - d e_1)`` for the unit-norm ``g ∝ exp(-|x|^2/(2 sigma^2))``."""
    return math.exp(-d * d / (4.0 * sigma * sigma))


def box_ground_level(extent: float) -> float:
    """Lowest Dirichlet eigenvalue of ``-Δ`` on ``[-L, L]^3``."""
    return 3.0 * (math.pi / (2.0 * extent)) ** 2
