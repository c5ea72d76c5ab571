"""Evolution-system descriptions: KdV and second-order parabolic conservation laws.

A parabolic system is U_t + (f(U))_x = D U_xx with a smooth flux
f: R^d -> R^d and symmetric positive definite diffusion D.  KdV is
U_t + (U^2/2)_x + U_xxx = 0 with the quadratic flux built in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SystemSpec",
    "kdv_system",
    "parabolic_system",
    "heat_system",
    "coupled_center_system",
    "burgers_system",
]


@dataclass(frozen=True)
class SystemSpec:
    kind: str                     # "kdv" | "parabolic"
    d: int
    flux: object = None           # callable (d, ...) -> (d, ...)
    dflux: object = None          # callable (d, ...) -> (d, d, ...)
    diffusion: np.ndarray | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("kdv", "parabolic"):
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.kind == "kdv":
            if self.d != 1:
                raise ValueError("KdV is scalar")
        else:
            if self.flux is None or self.dflux is None:
                raise ValueError("parabolic systems need flux and dflux")
            D = np.asarray(self.diffusion, dtype=float)
            if D.shape != (self.d, self.d):
                raise ValueError(f"diffusion must be {self.d}x{self.d}")
            if not np.allclose(D, D.T, atol=1e-13):
                raise ValueError("diffusion matrix must be symmetric")
            if np.any(np.linalg.eigvalsh(D) <= 0):
                raise ValueError("diffusion matrix must be positive definite")
            object.__setattr__(self, "diffusion", D)

    def eval_flux(self, u):
        u = np.asarray(u)
        if self.kind == "kdv":
            return 0.5 * u**2
        return np.asarray(self.flux(u))

    def eval_dflux(self, u):
        """Jacobian df(u), shape (d, d) + trailing axes of u."""
        u = np.asarray(u)
        if self.kind == "kdv":
            return u[None, ...]
        return np.asarray(self.dflux(u))


def kdv_system() -> SystemSpec:
    return SystemSpec(kind="kdv", d=1, name="kdv")


def parabolic_system(d, flux, dflux, diffusion, name="parabolic") -> SystemSpec:
    return SystemSpec(kind="parabolic", d=d, flux=flux, dflux=dflux,
                      diffusion=np.asarray(diffusion, dtype=float), name=name)


def heat_system(d=1, diffusion=None, advection=None) -> SystemSpec:
    """Linear-flux parabolic system, f(u) = A u; spectra are fully analytic."""
    D = np.eye(d) if diffusion is None else np.asarray(diffusion, dtype=float)
    A = np.zeros((d, d)) if advection is None else np.asarray(advection, dtype=float)

    def flux(u):
        return np.einsum("ab,b...->a...", A, u)

    def dflux(u):
        out = np.empty((d, d) + u.shape[1:])
        out[...] = A.reshape((d, d) + (1,) * (u.ndim - 1))
        return out

    return SystemSpec(kind="parabolic", d=d, flux=flux, dflux=dflux,
                      diffusion=D, name="heat", meta={"advection": A})


def coupled_center_system(diffusion=None) -> SystemSpec:
    """d=2 system with flux f(u, v) = (v, u^2/2).

    Its once-integrated profile equations form a reversible planar vector
    field with a center, so genuine nonconstant periodic traveling waves
    exist; handy for exercising the d+2 parameter family machinery.
    """
    D = np.eye(2) if diffusion is None else np.asarray(diffusion, dtype=float)

    def flux(u):
        return np.stack([u[1], 0.5 * u[0] ** 2])

    def dflux(u):
        z = np.zeros_like(u[0])
        o = np.ones_like(u[0])
        return np.stack([np.stack([z, o]), np.stack([u[0], z])])

    return SystemSpec(kind="parabolic", d=2, flux=flux, dflux=dflux,
                      diffusion=D, name="coupled_center")


def burgers_system(viscosity=1.0) -> SystemSpec:
    """Scalar parabolic conservation law with quadratic flux."""

    def flux(u):
        return 0.5 * u**2

    def dflux(u):
        return u[None]

    return SystemSpec(kind="parabolic", d=1, flux=flux, dflux=dflux,
                      diffusion=np.array([[float(viscosity)]]), name="burgers")
