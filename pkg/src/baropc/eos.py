"""Barotropic equations of state and their elastic potentials.

Each law provides rho(p), its derivative, the inverse pressure(rho), the
elastic potential P with P'(z) = pressure(z)/z^2, and the derivative of
z*P(z) used by the pressure-work inequality.  Potentials are anchored so
P(1) = 0 whenever the textbook integral from zero diverges; only
differences of the quantity integral(rho*P(rho)) are ever used.
"""

import numpy as np


class EosDomainError(ValueError):
    pass


def _check(cond, msg):
    if not np.all(cond):
        raise EosDomainError(msg)


class PowerLaw:
    """Isentropic law p = rho**gamma (gamma > 1)."""

    name = "power"

    def __init__(self, gamma=1.4):
        if gamma <= 1.0:
            raise ValueError("power law requires gamma > 1 (use 'linear' for gamma = 1)")
        self.gamma = float(gamma)

    def rho(self, p):
        p = np.asarray(p, dtype=float)
        _check(p > 0.0, "power law needs p > 0")
        return p ** (1.0 / self.gamma)

    def drho_dp(self, p):
        p = np.asarray(p, dtype=float)
        _check(p > 0.0, "power law needs p > 0")
        return p ** (1.0 / self.gamma - 1.0) / self.gamma

    def pressure(self, rho):
        rho = np.asarray(rho, dtype=float)
        _check(rho > 0.0, "density must be positive")
        return rho ** self.gamma

    def potential(self, rho):
        rho = np.asarray(rho, dtype=float)
        _check(rho > 0.0, "density must be positive")
        return rho ** (self.gamma - 1.0) / (self.gamma - 1.0)

    def rho_potential_prime(self, rho):
        rho = np.asarray(rho, dtype=float)
        _check(rho > 0.0, "density must be positive")
        return self.gamma / (self.gamma - 1.0) * rho ** (self.gamma - 1.0)


class LinearLaw:
    """Isothermal law p = rho, with P(rho) = log(rho)."""

    name = "linear"
    gamma = 1.0

    def rho(self, p):
        p = np.asarray(p, dtype=float)
        _check(p > 0.0, "linear law needs p > 0")
        return p.copy()

    def drho_dp(self, p):
        p = np.asarray(p, dtype=float)
        return np.ones_like(p)

    def pressure(self, rho):
        rho = np.asarray(rho, dtype=float)
        _check(rho > 0.0, "density must be positive")
        return rho.copy()

    def potential(self, rho):
        rho = np.asarray(rho, dtype=float)
        _check(rho > 0.0, "density must be positive")
        return np.log(rho)

    def rho_potential_prime(self, rho):
        rho = np.asarray(rho, dtype=float)
        _check(rho > 0.0, "density must be positive")
        return np.log(rho) + 1.0


class AffineLaw:
    """Low-Mach linearized law rho = 1 + gamma*Ma^2 * p.

    This is the law of the smooth test flow; rho(0) = 1, so positivity
    statements are made on rho rather than p.  The anchored potential is
    P(z) = (log z + 1/z - 1) / (gamma*Ma^2), with P(1) = 0.
    """

    name = "affine"

    def __init__(self, gamma=1.4, mach=0.5):
        if gamma <= 0.0 or mach <= 0.0:
            raise ValueError("affine law requires gamma > 0 and mach > 0")
        self.gamma = float(gamma)
        self.mach = float(mach)
        self.coeff = self.gamma * self.mach ** 2

    def rho(self, p):
        p = np.asarray(p, dtype=float)
        r = 1.0 + self.coeff * p
        _check(r > 0.0, "affine law needs 1 + gamma*Ma^2*p > 0")
        return r

    def drho_dp(self, p):
        p = np.asarray(p, dtype=float)
        return np.full_like(p, self.coeff)

    def pressure(self, rho):
        rho = np.asarray(rho, dtype=float)
        _check(rho > 0.0, "density must be positive")
        return (rho - 1.0) / self.coeff

    def potential(self, rho):
        rho = np.asarray(rho, dtype=float)
        _check(rho > 0.0, "density must be positive")
        return (np.log(rho) + 1.0 / rho - 1.0) / self.coeff

    def rho_potential_prime(self, rho):
        rho = np.asarray(rho, dtype=float)
        _check(rho > 0.0, "density must be positive")
        return np.log(rho) / self.coeff


_KINDS = {"power": PowerLaw, "linear": LinearLaw, "affine": AffineLaw}


def make_eos(kind, gamma=1.4, mach=0.5):
    """Instantiate an equation of state from config keys."""
    if kind not in _KINDS:
        raise ValueError(f"unknown eos '{kind}', expected one of {sorted(_KINDS)}")
    if kind == "power":
        return PowerLaw(gamma)
    if kind == "affine":
        return AffineLaw(gamma, mach)
    return LinearLaw()


def tangent_mean(g, gprime, a, b):
    """Value where the tangents of a strictly convex g at a and b agree.

    Returns the unique rbar with
        g(a) + g'(a) (rbar - a) = g(b) + g'(b) (rbar - b),
    which always lies in [min(a, b), max(a, b)].  For g(z) = z^2 this is
    the arithmetic mean, for g(z) = z*log(z) the logarithmic mean.
    """
    if a == b:
        return a
    ga, gb = g(a), g(b)
    da, db = gprime(a), gprime(b)
    denom = db - da
    if denom == 0.0:
        raise ValueError("g is not strictly convex between the inputs")
    return (ga - gb - da * a + db * b) / denom
