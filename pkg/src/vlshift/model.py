"""Target-cell-limited model parameterization and reaction structure.

The chain tracks susceptible target cells S, eclipse-phase cells E,
infectious cells I and free virions V.  The transmission parameter is
carried as the basic reproduction number R0 and converted to the
per-virion infection rate beta = R0*delta*c / (rho*S0) where needed.

Note on the virion production rate: the published rate table lists it as
proportional to V, but the mean-field equations, the progeny structure of
the branching approximation and the surrounding prose all have infectious
cells producing virions, so the rate used throughout is rho*I.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_S0 = 8e7
DEFAULT_K = 4.0
DEFAULT_C = 10.0


class DomainError(ValueError):
    """Raised when a parameter or argument is outside its valid domain."""


@dataclass(frozen=True)
class ModelParams:
    """Within-host parameter vector (R0, k, delta, rho, c, t0) plus fixed S0.

    Rates are per day; t0 is the infection time relative to the data's
    time origin.  R0 = 0 is admitted so the decoupled no-infection system
    can be solved and simulated; every rate constant must be positive.
    """

    R0: float
    k: float = DEFAULT_K
    delta: float = 1.0
    rho: float = 1.0
    c: float = DEFAULT_C
    t0: float = 0.0
    S0: float = field(default=DEFAULT_S0)

    def __post_init__(self):
        if not np.isfinite(self.R0) or self.R0 < 0:
            raise DomainError(f"R0 must be >= 0 and finite, got {self.R0}")
        for name in ("k", "delta", "rho", "c"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise DomainError(f"{name} must be > 0 and finite, got {v}")
        if self.S0 < 1:
            raise DomainError(f"S0 must be >= 1, got {self.S0}")
        if not np.isfinite(self.t0):
            raise DomainError(f"t0 must be finite, got {self.t0}")

    @property
    def beta(self) -> float:
        """Per-virion infection rate implied by R0 (0 when R0 = 0)."""
        return self.R0 * self.delta * self.c / (self.rho * self.S0)

    @property
    def beta_star(self) -> float:
        """Linearized infection rate beta * S0 used by the branching chain."""
        return self.R0 * self.delta * self.c / self.rho

    def with_t0(self, t0: float) -> "ModelParams":
        return replace(self, t0=t0)


def beta_from_r0(p: ModelParams) -> float:
    """Invert R0 = beta*S0*rho/(delta*c) for beta.  Requires R0 > 0."""
    if p.R0 <= 0:
        raise DomainError("beta_from_r0 requires R0 > 0")
    return p.R0 * p.delta * p.c / (p.rho * p.S0)


def r0_from_beta(beta: float, p: ModelParams) -> float:
    """R0 implied by a per-virion infection rate under p's other rates."""
    if beta <= 0:
        raise DomainError("r0_from_beta requires beta > 0")
    return beta * p.S0 * p.rho / (p.delta * p.c)


@dataclass(frozen=True)
class State:
    """Nonnegative integer counts (S, E, I, V)."""

    S: int
    E: int
    I: int
    V: int

    def __post_init__(self):
        for name in ("S", "E", "I", "V"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.S, self.E, self.I, self.V], dtype=float)


@dataclass(frozen=True)
class Reaction:
    """One event type: state change vector and its rate kind."""

    delta_state: tuple[int, int, int, int]
    rate_kind: str


REACTIONS: tuple[Reaction, ...] = (
    Reaction((-1, +1, 0, 0), "infection"),
    Reaction((0, -1, +1, 0), "eclipse_exit"),
    Reaction((0, 0, -1, 0), "cell_removal"),
    Reaction((0, 0, 0, +1), "virion_production"),
    Reaction((0, 0, 0, -1), "virion_clearance"),
)


def rates(state: State, p: ModelParams) -> np.ndarray:
    """Event rates (beta*S*V, k*E, delta*I, rho*I, c*V) at the given state."""
    return np.array(
        [
            p.beta * state.S * state.V,
            p.k * state.E,
            p.delta * state.I,
            p.rho * state.I,
            p.c * state.V,
        ]
    )


def initial_state(p: ModelParams) -> State:
    """Single eclipse-phase cell in an otherwise susceptible population."""
    return State(S=int(p.S0) - 1, E=1, I=0, V=0)


FIG1_PARAMS = ModelParams(R0=8.0, k=4.0, delta=1.7, rho=3.0, c=10.0, t0=0.0)
