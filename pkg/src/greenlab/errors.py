"""Exception types shared across the package."""


class GreenlabError(Exception):
    """Base class for all package errors."""


class PreconditionError(GreenlabError):
    """An operation was called outside its stated precondition."""


class ChartError(GreenlabError):
    """Boundary chart requested at an invalid location or on an
    unsupported domain."""


class ResolutionError(GreenlabError):
    """A lattice search could not certify a result at the requested
    resolution (for example, no admissible lattice path exists)."""


class StratificationError(GreenlabError):
    """A stratified sampler could not fill one of its strata."""


class SolveError(GreenlabError):
    """A linear solve failed to meet its residual contract."""


class StencilError(GreenlabError):
    """A finite-difference stencil could not be completed from usable
    nodes (for example, in a one-node sliver of the domain)."""


class CapabilityError(GreenlabError):
    """A verifier needs an evaluation capability the kernel handle does
    not provide."""


class EvalPlanError(GreenlabError):
    """A kernel evaluation was requested at argument combinations the
    table-backed evaluator cannot serve."""


class ExtensionRefusal(GreenlabError):
    """The base kernel failed its standard-kernel check, so the global
    extension quality cannot be guaranteed."""


class ConfigError(GreenlabError):
    """An experiment configuration failed to parse or validate."""


class UsageError(GreenlabError):
    """A command-line request named an unknown verifier or subcommand
    option."""
