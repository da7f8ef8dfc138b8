"""Exception hierarchy shared across the toolkit.

Every error carries enough context to be acted on programmatically; the CLI
maps each class to a distinct exit code.
"""


class VoltstabError(Exception):
    """Base class for all toolkit errors."""


class CaseSchemaError(VoltstabError):
    """A case or scenario document violates the schema.

    ``path`` is the dotted/indexed location of the offending field,
    e.g. ``buses[2].k_rate``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class DisconnectedNetworkError(VoltstabError):
    """The in-service branch graph does not connect all buses."""

    def __init__(self, component):
        self.component = sorted(component)
        super().__init__(
            "network is disconnected; isolated component: "
            f"buses {self.component}"
        )


class PowerFlowDivergence(VoltstabError):
    """Newton-Raphson failed to converge within the iteration cap.

    Used both as a hard error and as a collapse signal: the final mismatch
    is preserved so callers can distinguish "almost there" from blow-up.
    """

    def __init__(self, mismatch, iterations):
        self.mismatch = mismatch
        self.iterations = iterations
        super().__init__(
            f"power flow did not converge in {iterations} iterations "
            f"(max mismatch {mismatch:.3e} p.u.)"
        )


class SingularRecursionError(VoltstabError):
    """The power-series recursion matrix is singular (base case at or past
    the bifurcation)."""


class NoPositiveRootError(VoltstabError):
    """No Pade numerator produced a positive real root: the loading
    direction never causes collapse within the numerical horizon."""


class EvaluationSingularity(VoltstabError):
    """A rational approximant was evaluated at (or next to) a denominator
    root."""

    def __init__(self, s, bus):
        self.s = s
        self.bus = bus
        super().__init__(f"Pade denominator vanishes near s={s:g} at bus {bus}")


class NoAdmissibleMarginError(VoltstabError):
    """The requested survival probability cannot be met: the derived margin
    loading would be non-positive."""


class AlgebraicSingularityError(VoltstabError):
    """The algebraic Jacobian g_y is singular at the evaluation point; this
    is the voltage-collapse surface."""


class UnstableEquilibriumError(VoltstabError):
    """The state matrix has an eigenvalue with non-negative real part, so
    the stationary covariance does not exist (it diverges as the system
    approaches singularity)."""

    def __init__(self, max_real):
        self.max_real = max_real
        super().__init__(
            "unstable equilibrium: max Re(eig) = "
            f"{max_real:.3e} >= 0; predicted variance is undefined/divergent"
        )


class CollapseAtInitializationError(VoltstabError):
    """No equilibrium exists at the requested loading (beyond the nose)."""


class ModelConfigurationError(VoltstabError):
    """Inconsistent model wiring, e.g. a machine placed at a PQ bus."""
