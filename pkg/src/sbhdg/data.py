"""Loads, boundary data and interface data of a Stokes-Biot problem.

All callables are vectorized over points ``x`` of shape (N, 2). Volume and
Dirichlet data take ``(x, t)``; flux-type data also receive the unit normal
``n`` of shape (N, 2): the outward normal on the outer boundary, and the
normal pointing from the Stokes into the Biot region on the interface.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Callable, Optional

import numpy as np

Field = Optional[Callable[..., np.ndarray]]


class MissingDataError(ValueError):
    pass


def zero_scalar(x, *args):
    return np.zeros(len(x))


def zero_vector(x, *args):
    return np.zeros((len(x), 2))


@dataclass(frozen=True)
class ProblemData:
    f_s: Field = None    # body force on the Stokes region
    f_b: Field = None    # body force on the Biot region
    g_b: Field = None    # source/sink in the pore-pressure equation
    U_s: Field = None    # velocity on Gamma_D^s
    U_b: Field = None    # displacement on Gamma_D^b
    S_s: Field = None    # traction sigma^s n on Gamma_N^s
    S_b: Field = None    # traction sigma^b n on Gamma_N^b
    P_p: Field = None    # pore pressure on Gamma_P^b
    Z: Field = None      # normal Darcy flux on Gamma_F^b
    M_u: Field = None    # interface mass defect
    M_s: Field = None    # interface traction jump
    M_p: Field = None    # interface normal-stress defect
    M_e: Field = None    # interface tangential-stress defect

    VECTOR = ("f_s", "f_b", "U_s", "U_b", "S_s", "S_b", "M_s", "M_e")

    @classmethod
    def homogeneous(cls) -> "ProblemData":
        return cls(**{f.name: (zero_vector if f.name in cls.VECTOR else zero_scalar)
                      for f in fields(cls)})

    def replace(self, **changes) -> "ProblemData":
        return replace(self, **changes)

    def require(self, name: str) -> Callable:
        fn = getattr(self, name)
        if fn is None:
            raise MissingDataError(f"data {name!r} is required by this mesh but was not provided")
        return fn
