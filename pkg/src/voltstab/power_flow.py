"""Newton-Raphson power flow and the closed-form two-bus PV curve.

The solver works in polar coordinates with a full Jacobian refactorized
every iteration (dense linear algebra; the bundled cases stay below 40
buses).  Loads scale along a direction vector k as

    S_i(s) = S_0i + s * k_i * S_0i

which is how the continuation and the slow stochastic drift move the
operating point.

Two generator conventions are supported:

* standard: PV buses hold magnitude, the reference bus holds its complex
  voltage, PV-bus active injections are the scheduled values;
* frozen: a caller-supplied set of buses is held at fixed *complex*
  voltage.  Freezing all generator buses at their base-case phasors is the
  convention the holomorphic continuation uses, so Newton validation runs
  must be able to reproduce it.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import PowerFlowDivergence
from .grid_model import BusKind, Network, build_admittance_matrix

__all__ = [
    "PowerFlowSolution",
    "scaled_injections",
    "solve_newton",
    "pv_curve_newton",
    "TwoBusCurve",
    "two_bus_pv_curve",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 25


@dataclass(frozen=True)
class PowerFlowSolution:
    """Converged network state in network bus order."""

    v: np.ndarray            # complex bus voltages
    injections: np.ndarray   # net complex power V_i * conj((Y V)_i)
    iterations: int
    max_mismatch: float
    scale: float = 0.0

    @property
    def v_mag(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def v_ang(self) -> np.ndarray:
        return np.angle(self.v)


def scaled_injections(network: Network, s: float, k: np.ndarray | None = None) -> np.ndarray:
    """Net injections with loads scaled by the loading factor ``s``.

    Only the load part scales; scheduled generation is untouched (the
    reference machine balances the system).
    """
    if k is None:
        k = network.k_vector
    k = np.asarray(k, dtype=float)
    load = np.array([b.base_load for b in network.buses], dtype=complex)
    inj = -(1.0 + s * k) * load
    for m in network.machines:
        inj[network.index_of(m.bus)] += m.p_gen
    return inj


def _network_injections(y: np.ndarray, v: np.ndarray) -> np.ndarray:
    return v * np.conj(y @ v)


def _jacobian_polar(y: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, ...]:
    """dP/dtheta, dP/dV, dQ/dtheta, dQ/dV for all buses at once."""
    vm = np.abs(v)
    i_inj = y @ v
    s = v * np.conj(i_inj)
    p, q = s.real, s.imag
    # off-diagonal building block: m_ik = V_i * conj(Y_ik V_k)
    m = v[:, None] * np.conj(y * v[None, :])
    dp_dth = m.imag.copy()
    dq_dth = -m.real.copy()
    np.fill_diagonal(dp_dth, -q - vm**2 * np.diag(y).imag)
    np.fill_diagonal(dq_dth, p - vm**2 * np.diag(y).real)
    with np.errstate(invalid="ignore", divide="ignore"):
        dp_dv = m.real / vm[None, :]
        dq_dv = m.imag / vm[None, :]
    np.fill_diagonal(dp_dv, (p + vm**2 * np.diag(y).real) / vm)
    np.fill_diagonal(dq_dv, (q - vm**2 * np.diag(y).imag) / vm)
    return dp_dth, dp_dv, dq_dth, dq_dv


def solve_newton(
    network: Network,
    *,
    scale: float = 0.0,
    k: np.ndarray | None = None,
    initial: np.ndarray | None = None,
    frozen: dict[int, complex] | None = None,
    y: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PowerFlowSolution:
    """Full Newton-Raphson solve of the scaled-load power flow.

    ``frozen`` maps bus ids to fixed complex voltages; frozen buses drop out
    of the unknown set entirely (the reference bus is always frozen at its
    setpoint).  Raises :class:`PowerFlowDivergence`, carrying the final
    mismatch, when the iteration cap is hit.
    """
    if y is None:
        y = build_admittance_matrix(network)
    n = network.n_bus
    spec = scaled_injections(network, scale, k)

    fixed = np.zeros(n, dtype=bool)
    v = np.ones(n, dtype=complex)
    for idx, bus in enumerate(network.buses):
        if bus.kind is BusKind.REFERENCE:
            v[idx] = bus.v_set
            fixed[idx] = True
        elif bus.kind is BusKind.PV:
            v[idx] = bus.v_set
    if frozen:
        for bus_id, volt in frozen.items():
            idx = network.index_of(bus_id)
            v[idx] = volt
            fixed[idx] = True
    if initial is not None:
        initial = np.asarray(initial, dtype=complex)
        if np.any(np.abs(initial) == 0.0):
            raise ValueError("initial guess must have nonzero magnitudes")
        keep = ~fixed
        v[keep] = initial[keep]
        # PV buses keep their magnitude but adopt the initial angle
        for idx, bus in enumerate(network.buses):
            if bus.kind is BusKind.PV and not fixed[idx]:
                v[idx] = bus.v_set * cmath.exp(1j * np.angle(initial[idx]))

    is_pq = np.array(
        [b.kind is BusKind.PQ and not fixed[i] for i, b in enumerate(network.buses)]
    )
    is_ang = ~fixed  # buses whose angle is unknown (PQ + PV)
    ang_idx = np.flatnonzero(is_ang)
    pq_idx = np.flatnonzero(is_pq)

    theta = np.angle(v)
    vm = np.abs(v)
    mismatch = math.inf
    for it in range(max_iter + 1):
        v = vm * np.exp(1j * theta)
        ds = _network_injections(y, v) - spec
        f = np.concatenate([ds.real[ang_idx], ds.imag[pq_idx]])
        mismatch = float(np.max(np.abs(f))) if f.size else 0.0
        if mismatch <= tol:
            return PowerFlowSolution(
                v=v,
                injections=_network_injections(y, v),
                iterations=it,
                max_mismatch=mismatch,
                scale=scale,
            )
        if it == max_iter:
            break
        dp_dth, dp_dv, dq_dth, dq_dv = _jacobian_polar(y, v)
        jac = np.block(
            [
                [dp_dth[np.ix_(ang_idx, ang_idx)], dp_dv[np.ix_(ang_idx, pq_idx)]],
                [dq_dth[np.ix_(pq_idx, ang_idx)], dq_dv[np.ix_(pq_idx, pq_idx)]],
            ]
        )
        try:
            step = np.linalg.solve(jac, f)
        except np.linalg.LinAlgError:
            raise PowerFlowDivergence(mismatch, it) from None
        theta[ang_idx] -= step[: ang_idx.size]
        vm[pq_idx] -= step[ang_idx.size :]
        if np.any(vm[pq_idx] <= 0):
            raise PowerFlowDivergence(mismatch, it)
    raise PowerFlowDivergence(mismatch, max_iter)


def pv_curve_newton(
    network: Network,
    s_grid: np.ndarray,
    *,
    k: np.ndarray | None = None,
    frozen: dict[int, complex] | None = None,
    tol: float = DEFAULT_TOL,
) -> tuple[list[tuple[float, PowerFlowSolution | None]], int | None]:
    """Trace the PV curve over a monotone ``s_grid`` starting at 0.

    Warm-starts each point from the previous converged solution so the
    high-voltage branch is tracked.  Per-point convergence failures are
    data, not errors; returns the points plus the first failing index (or
    None).
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.size and (s_grid[0] < 0 or np.any(np.diff(s_grid) <= 0)):
        raise ValueError("s grid must be monotone increasing from 0")
    y = build_admittance_matrix(network)
    points: list[tuple[float, PowerFlowSolution | None]] = []
    first_fail: int | None = None
    guess: np.ndarray | None = None
    for i, s in enumerate(s_grid):
        try:
            sol = solve_newton(
                network, scale=float(s), k=k, initial=guess, frozen=frozen,
                y=y, tol=tol,
            )
            guess = sol.v
            points.append((float(s), sol))
        except PowerFlowDivergence:
            points.append((float(s), None))
            if first_fail is None:
                first_fail = i
    return points, first_fail


@dataclass(frozen=True)
class TwoBusCurve:
    """Analytic PV curve of the source-line-load system.

    ``p`` is the active power demand grid; the high/low arrays are the two
    voltage solution branches (NaN beyond the nose).
    """

    p: np.ndarray
    v_high: np.ndarray
    v_low: np.ndarray
    p_nose: float
    v_nose: float


def _two_bus_w(
    p: float, tan_phi: float, y_series: complex, b_shunt: float, v_source: float
) -> tuple[float, float]:
    """Both roots of the quadratic in W = |V_t|^2 for load P + jP*tan_phi."""
    a_tot = y_series + 1j * b_shunt
    alpha = abs(a_tot) ** 2
    g = (np.conj(a_tot) * complex(p, -p * tan_phi)).real
    beta = 2.0 * g - (v_source * abs(y_series)) ** 2
    gamma = p * p * (1.0 + tan_phi**2)
    disc = beta * beta - 4.0 * alpha * gamma
    if disc < 0:
        return math.nan, math.nan
    root = math.sqrt(disc)
    return (-beta + root) / (2 * alpha), (-beta - root) / (2 * alpha)


def two_bus_pv_curve(
    y_series: complex,
    power_factor: float,
    b_shunt: float = 0.0,
    *,
    v_source: float = 1.0,
    n_points: int = 400,
) -> TwoBusCurve:
    """Closed-form nose curve for a fixed source feeding one constant-power
    load with optional shunt support.

    Solving S-balance at the load bus for W = |V_t|^2 gives a quadratic
    whose two roots are the high- and low-voltage branches; the nose is
    where its discriminant vanishes.
    """
    if y_series == 0:
        raise ValueError("line admittance must be nonzero")
    if not 0.0 < power_factor <= 1.0:
        raise ValueError("power factor must lie in (0, 1]")
    tan_phi = math.tan(math.acos(power_factor))

    # nose: discriminant(P) = 0 is itself a quadratic in P
    a_tot = y_series + 1j * b_shunt
    alpha = abs(a_tot) ** 2
    g = (np.conj(a_tot) * complex(1.0, -tan_phi)).real  # per unit of P
    c2 = 4.0 * g * g - 4.0 * alpha * (1.0 + tan_phi**2)
    c1 = -4.0 * g * (v_source * abs(y_series)) ** 2
    c0 = (v_source * abs(y_series)) ** 4
    roots = np.roots([c2, c1, c0]) if abs(c2) > 0 else np.array([-c0 / c1])
    pos = [r.real for r in roots if abs(r.imag) < 1e-9 * (1 + abs(r)) and r.real > 0]
    if not pos:
        raise ValueError("no positive collapse power for these parameters")
    p_nose = min(pos)
    w_hi, _ = _two_bus_w(p_nose, tan_phi, y_series, b_shunt, v_source)
    v_nose = math.sqrt(max(w_hi, 0.0))

    p = np.linspace(0.0, p_nose, n_points)
    v_high = np.empty_like(p)
    v_low = np.empty_like(p)
    for i, pi in enumerate(p):
        hi, lo = _two_bus_w(float(pi), tan_phi, y_series, b_shunt, v_source)
        v_high[i] = math.sqrt(hi) if hi == hi and hi > 0 else math.nan
        v_low[i] = math.sqrt(lo) if lo == lo and lo > 0 else math.nan
    return TwoBusCurve(p=p, v_high=v_high, v_low=v_low, p_nose=p_nose, v_nose=v_nose)
