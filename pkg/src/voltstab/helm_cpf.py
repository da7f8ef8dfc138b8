"""Continuation power flow via holomorphic embedding.

Starting from a converged base case, bus voltages are expanded as power
series in the loading factor s, with the load at bus i scaling as
S_0i(1 + s k_i) and every generator (PV and reference) held at its
base-case *complex* voltage.  Writing W_i(s) for the series of
1/V_i*(s*), matching the embedded balance equation order by order gives,
for n >= 1 at each PQ bus,

    sum_k Y_ik V_k[n] + S_i* W_i[0]^2 conj(V_i[n])
        = S_i* ( k_i W_i[n-1] - W_i[0] sum_{m=1}^{n-1} conj(V_i[m]) W_i[n-m] )

The conjugated current-order term makes the system linear over the reals
rather than the complexes, so each order is one solve against the same
fixed real 2m x 2m matrix (factorized once); W is then extended by
convolution inversion.

Rational (Pade) approximants of each bus series extend the evaluation
radius and expose the collapse point: the critical loading s_c is the
smallest positive real root among the numerator polynomials, the series'
shared branch-point singularity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.linalg import lu_factor, lu_solve

from .errors import (
    EvaluationSingularity,
    NoPositiveRootError,
    SingularRecursionError,
)
from .grid_model import BusKind, Network, build_admittance_matrix
from .power_flow import PowerFlowSolution, scaled_injections, solve_newton

__all__ = [
    "PowerSeriesSet",
    "PadePair",
    "CriticalLoading",
    "embed_and_recurse",
    "pade",
    "pade_all",
    "critical_loading",
    "evaluate_voltages",
    "HelmContinuation",
    "continuation",
]

DEFAULT_TERMS = 41


@dataclass(frozen=True)
class PowerSeriesSet:
    """Voltage series V_i[n] and reciprocal-conjugate series W_i[n] for all
    buses (generator columns are constant), with the loading direction k
    that produced them."""

    v: np.ndarray          # (n_terms, n_bus) complex
    w: np.ndarray          # (n_terms, n_bus) complex, series of 1/V*(s*)
    k: np.ndarray          # (n_bus,) loading rates
    pq: np.ndarray         # PQ bus positions
    bus_ids: tuple[int, ...]

    @property
    def n_terms(self) -> int:
        return self.v.shape[0]


@dataclass(frozen=True)
class PadePair:
    """Diagonal rational approximant A/B of one bus series; B[0] = 1.
    ``degree_reduced`` flags series too degenerate for the full degree."""

    a: np.ndarray
    b: np.ndarray
    bus_id: int
    degree_reduced: bool = False

    def __call__(self, s: float) -> complex:
        num = npoly.polyval(s, self.a)
        den = npoly.polyval(s, self.b)
        scale = np.max(np.abs(self.b)) * max(1.0, abs(s)) ** (len(self.b) - 1)
        if abs(den) < 1e-13 * scale:
            raise EvaluationSingularity(s, self.bus_id)
        return num / den


@dataclass(frozen=True)
class CriticalLoading:
    """Collapse loading: minimum over buses of each numerator's smallest
    positive real root."""

    s_c: float
    critical_bus: int
    roots_by_bus: dict[int, tuple[float, ...]]


def embed_and_recurse(
    network: Network,
    base: PowerFlowSolution,
    k: np.ndarray | None = None,
    n_terms: int = DEFAULT_TERMS,
    *,
    base_tol: float = 1e-8,
) -> PowerSeriesSet:
    """Recur the voltage power series from a converged base case.

    ``n_terms`` must be odd so the diagonal Pade degrees come out integral.
    Raises :class:`SingularRecursionError` when the fixed recursion matrix
    is singular, i.e. the base case already sits at the bifurcation.
    """
    if n_terms < 3 or n_terms % 2 == 0:
        raise ValueError("n_terms must be odd and >= 3")
    if k is None:
        k = network.k_vector
    k = np.asarray(k, dtype=float)
    y = build_admittance_matrix(network)
    n = network.n_bus
    pq = network.pq
    m = pq.size

    v0 = np.asarray(base.v, dtype=complex)
    s_inj = scaled_injections(network, 0.0, k)
    resid = np.abs(v0 * np.conj(y @ v0) - s_inj)[pq]
    if resid.size and resid.max() > base_tol:
        raise ValueError(
            f"base solution does not satisfy the unscaled equations "
            f"(max residual {resid.max():.3e})"
        )

    v = np.zeros((n_terms, n), dtype=complex)
    w = np.zeros((n_terms, n), dtype=complex)
    v[0] = v0
    w[0] = 1.0 / np.conj(v0)
    if m == 0:
        return PowerSeriesSet(v=v, w=w, k=k, pq=pq,
                              bus_ids=tuple(b.id for b in network.buses))

    s_conj = np.conj(s_inj[pq])
    w0 = w[0, pq]
    c = s_conj * w0**2
    a = y[np.ix_(pq, pq)]
    big = np.block(
        [
            [a.real + np.diag(c.real), -a.imag + np.diag(c.imag)],
            [a.imag + np.diag(c.imag), a.real - np.diag(c.real)],
        ]
    )
    try:
        lu = lu_factor(big)
    except np.linalg.LinAlgError:
        raise SingularRecursionError("recursion matrix is singular") from None
    if not np.all(np.isfinite(lu[0])):
        raise SingularRecursionError("recursion matrix is singular")

    k_pq = k[pq]
    for order in range(1, n_terms):
        # partial convolution sum_{m=1}^{order-1} conj(V[m]) W[order-m]
        if order > 1:
            partial = np.einsum(
                "mi,mi->i", np.conj(v[1:order, pq]), w[order - 1 : 0 : -1, pq]
            )
        else:
            partial = np.zeros(m, dtype=complex)
        rhs = s_conj * (k_pq * w[order - 1, pq] - w0 * partial)
        sol = lu_solve(lu, np.concatenate([rhs.real, rhs.imag]))
        v[order, pq] = sol[:m] + 1j * sol[m:]
        w[order, pq] = -w0 * (partial + np.conj(v[order, pq]) * w0)
    return PowerSeriesSet(v=v, w=w, k=k, pq=pq,
                          bus_ids=tuple(b.id for b in network.buses))


def pade(coeffs: np.ndarray, bus_id: int = -1) -> PadePair:
    """Diagonal Pade approximant of one coefficient list (odd length).

    The denominator is found from the Toeplitz linear system on the tail
    coefficients and the numerator by convolution.  A rank-deficient
    (degenerate) system reduces the degree until solvable, flagging the
    result.
    """
    c = np.asarray(coeffs, dtype=complex)
    if c.ndim != 1 or len(c) < 3 or len(c) % 2 == 0:
        raise ValueError("need an odd number of coefficients >= 3")
    deg_full = (len(c) - 1) // 2
    scale = np.max(np.abs(c))
    if scale == 0.0:
        return PadePair(a=np.zeros(1, dtype=complex), b=np.ones(1, dtype=complex),
                        bus_id=bus_id, degree_reduced=True)

    if np.max(np.abs(c[1:])) <= 1e-14 * scale:
        # constant function: degree reduces all the way to A = c0, B = 1
        return PadePair(a=c[:1].copy(), b=np.ones(1, dtype=complex),
                        bus_id=bus_id, degree_reduced=True)

    for deg in range(deg_full, 0, -1):
        t = np.empty((deg, deg), dtype=complex)
        for r in range(deg):
            for j in range(deg):
                idx = deg + r - j
                t[r, j] = c[idx] if idx >= 0 else 0.0
        rhs = -c[deg + 1 : 2 * deg + 1]
        # Pade Toeplitz systems are routinely ill-conditioned yet still
        # yield accurate approximants; reduce the degree only on exact
        # breakdown, not on condition number.
        try:
            b_tail = np.linalg.solve(t, rhs)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(b_tail)):
            continue
        b = np.concatenate([[1.0 + 0j], b_tail])
        a = np.array(
            [np.dot(b[: i + 1], c[i::-1][: i + 1]) for i in range(deg + 1)],
            dtype=complex,
        )
        if not np.all(np.isfinite(a)):
            continue
        return PadePair(a=a, b=b, bus_id=bus_id, degree_reduced=deg != deg_full)
    return PadePair(a=c[:1].copy(), b=np.ones(1, dtype=complex),
                    bus_id=bus_id, degree_reduced=True)


def pade_all(series: PowerSeriesSet) -> list[PadePair]:
    """Pade approximants for every PQ bus of a series set."""
    return [
        pade(series.v[:, i], bus_id=series.bus_ids[i]) for i in series.pq
    ]


def _positive_real_roots(pair: PadePair) -> list[float]:
    """Positive real roots of the numerator.

    Degree-20 companion eigenvalues of noisy series carry imaginary parts
    up to ~1e-3 relative on genuine real roots, so the acceptance band is
    2e-3.  Spurious zeros born of coefficient noise come paired with a
    denominator root within ~1e-7 (Froissart doublets) while genuine
    ladder zeros keep >= 1e-5 separation from the nearest pole; pairs
    closer than 1e-6 relative are dropped.
    """
    if len(pair.a) < 2:
        return []
    roots = npoly.polyroots(pair.a)
    poles = npoly.polyroots(pair.b) if len(pair.b) > 1 else np.array([])
    out = []
    for r in roots:
        if r.real <= 0 or abs(r.imag) / (1.0 + abs(r.real)) >= 2e-3:
            continue
        if poles.size and np.min(np.abs(poles - r)) < 1e-6 * (1.0 + abs(r)):
            continue
        out.append(float(r.real))
    return sorted(out)


def critical_loading(pades: list[PadePair]) -> CriticalLoading:
    """Collapse loading from all PQ-bus approximants.

    Raises :class:`NoPositiveRootError` when no numerator has a positive
    real root (the direction never causes collapse within the numerical
    horizon).
    """
    roots_by_bus: dict[int, tuple[float, ...]] = {}
    best: tuple[float, int] | None = None
    for pair in pades:
        roots = _positive_real_roots(pair)
        roots_by_bus[pair.bus_id] = tuple(roots)
        if roots and (best is None or roots[0] < best[0]):
            best = (roots[0], pair.bus_id)
    if best is None:
        raise NoPositiveRootError(
            "no Pade numerator has a positive real root: this loading "
            "direction does not lead to collapse"
        )
    return CriticalLoading(s_c=best[0], critical_bus=best[1],
                           roots_by_bus=roots_by_bus)


def evaluate_voltages(
    series: PowerSeriesSet,
    s: float,
    *,
    pades: list[PadePair] | None = None,
    method: str = "auto",
    s_c: float | None = None,
) -> np.ndarray:
    """Bus voltages at loading ``s`` in network order.

    ``method`` is "series", "pade", or "auto"; auto prefers the rational
    form beyond half the critical loading (raw truncated series degrade
    there first).
    """
    if method not in ("auto", "series", "pade"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        if pades is not None and (s_c is None or s > 0.5 * s_c):
            method = "pade"
        else:
            method = "series"
    if method == "pade":
        if pades is None:
            pades = pade_all(series)
        v = series.v[0].copy()
        for pair, idx in zip(pades, series.pq):
            v[idx] = pair(s)
        return v
    powers = s ** np.arange(series.n_terms)
    return powers @ series.v


@dataclass(frozen=True)
class HelmContinuation:
    """Convenience bundle: series, approximants and the critical loading
    for one (network, direction) pair."""

    series: PowerSeriesSet
    pades: list[PadePair]
    critical: CriticalLoading

    @property
    def s_c(self) -> float:
        return self.critical.s_c

    def voltages(self, s: float, method: str = "auto") -> np.ndarray:
        return evaluate_voltages(
            self.series, s, pades=self.pades, method=method, s_c=self.s_c
        )


def continuation(
    network: Network,
    k: np.ndarray | None = None,
    n_terms: int = DEFAULT_TERMS,
    base: PowerFlowSolution | None = None,
) -> HelmContinuation:
    """Solve the base case (unless given), recur the series, build the
    approximants, and locate the critical loading."""
    if base is None:
        base = solve_newton(network)
    series = embed_and_recurse(network, base, k, n_terms)
    pades = pade_all(series)
    return HelmContinuation(series=series, pades=pades,
                            critical=critical_loading(pades))
