"""Physical and discretization constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace


class InvalidParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterSet:
    """Constants of the coupled problem.

    ``inv_lambda`` stores 1/lambda so that the incompressible limit
    (``inv_lambda = 0``) is exact. ``beta_s``/``beta_b`` default to 8 k^2.
    ``tau`` is the steady regularization weight, ``dt`` the time step.
    """

    mu_s: float = 1e-2
    mu_b: float = 1e-3
    inv_lambda: float = 1e-2
    alpha: float = 0.2
    c0: float = 1e-2
    kappa: float = 1e-2
    gamma: float = 0.3
    k: int = 2
    beta_s: float | None = None
    beta_b: float | None = None
    tau: float | None = None
    dt: float | None = None

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise InvalidParameterError(f"k must be an integer >= 1, got {self.k}")
        if self.beta_s is None:
            object.__setattr__(self, "beta_s", 8.0 * self.k**2)
        if self.beta_b is None:
            object.__setattr__(self, "beta_b", 8.0 * self.k**2)
        positive = ("mu_s", "mu_b", "kappa", "gamma", "beta_s", "beta_b")
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive and finite, got {value}")
        if not (0 < self.alpha <= 1):
            raise InvalidParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (math.isfinite(self.c0) and self.c0 >= 0):
            raise InvalidParameterError(f"c0 must be >= 0, got {self.c0}")
        if not (math.isfinite(self.inv_lambda) and self.inv_lambda >= 0):
            raise InvalidParameterError(f"inv_lambda must be >= 0, got {self.inv_lambda}")
        for name in ("tau", "dt"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive, got {value}")

    @classmethod
    def with_lambda(cls, lam: float, **kwargs) -> "ParameterSet":
        """Build from lambda itself; ``lam = inf`` gives the incompressible limit."""
        if not lam > 0:
            raise InvalidParameterError(f"lambda must be positive, got {lam}")
        return cls(inv_lambda=0.0 if math.isinf(lam) else 1.0 / lam, **kwargs)

    @property
    def lam(self) -> float:
        return math.inf if self.inv_lambda == 0 else 1.0 / self.inv_lambda

    @property
    def nu(self) -> float:
        """Poisson ratio lambda / (2 (lambda + mu_b))."""
        if self.inv_lambda == 0:
            return 0.5
        return 1.0 / (2.0 * (1.0 + self.mu_b * self.inv_lambda))

    @property
    def young(self) -> float:
        if self.inv_lambda == 0:
            return 3.0 * self.mu_b
        lam = self.lam
        return (3 * lam + 2 * self.mu_b) * self.mu_b / (lam + self.mu_b)

    @property
    def bjs(self) -> float:
        """Beavers-Joseph-Saffman coefficient gamma (mu_s / kappa)^(1/2)."""
        return self.gamma * math.sqrt(self.mu_s / self.kappa)

    def replace(self, **changes) -> "ParameterSet":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
