"""Sparsifying penalties and their exact proximal maps.

A :class:`Grouping` partitions one parameter tensor into groups: every
coordinate on its own (``per_element``) or one group per output filter of a
conv weight (``per_filter``).  A :class:`Penalty` is a grouping plus a
threshold ``lam`` and denotes lam * sum of group L2 norms, which collapses
to a scaled L1 norm under per-element grouping.

The proximal map has the closed form

    prox(v)^g = max(0, 1 - lam / ||v^g||) * v^g

scaled by ``kappa`` on the way out.  Groups at or below the threshold come
out exactly zero; that exactness is what downstream support masks and
sparsity measurements count on, so no epsilon comparisons here.
``prox_oracle`` reproduces the map by numerically minimizing each group's
radial objective and exists purely to cross-check the closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEMES = ("per_element", "per_filter")


@dataclass(frozen=True)
class Grouping:
    """Partition of a tensor of a given shape into penalty groups."""

    scheme: str
    shape: tuple

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown grouping scheme {self.scheme!r}")
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(d < 1 for d in self.shape):
            raise ValueError(f"grouping shape must be positive, got {self.shape}")
        if self.scheme == "per_filter" and len(self.shape) != 4:
            raise ValueError(
                "per_filter grouping needs a (c_out, c_in, k, k) tensor, "
                f"got shape {self.shape}"
            )

    @property
    def n_groups(self) -> int:
        if self.scheme == "per_filter":
            return self.shape[0]
        return int(np.prod(self.shape))

    def check(self, t: np.ndarray) -> None:
        if t.shape != self.shape:
            raise ValueError(f"tensor shape {t.shape} does not match grouping {self.shape}")

    def group_norms(self, t: np.ndarray) -> np.ndarray:
        """L2 norm of every group, as a flat (n_groups,) vector."""
        self.check(t)
        if self.scheme == "per_filter":
            return np.sqrt(np.sum(t * t, axis=(1, 2, 3)))
        return np.abs(t).reshape(-1)

    def scale_by_group(self, t: np.ndarray, factors: np.ndarray) -> np.ndarray:
        """Multiply each group of ``t`` by its entry of ``factors``."""
        self.check(t)
        if self.scheme == "per_filter":
            return t * factors[:, None, None, None]
        return t * factors.reshape(self.shape)

    def group_support(self, t: np.ndarray) -> np.ndarray:
        """Boolean per-group vector: does the group hold any exact nonzero?"""
        self.check(t)
        if self.scheme == "per_filter":
            return np.any(t != 0.0, axis=(1, 2, 3))
        return (t != 0.0).reshape(-1)

    def expand(self, per_group: np.ndarray) -> np.ndarray:
        """Broadcast a per-group vector back to the full tensor shape."""
        if self.scheme == "per_filter":
            reps = int(np.prod(self.shape[1:]))
            return np.repeat(per_group, reps).reshape(self.shape)
        return per_group.reshape(self.shape)


@dataclass(frozen=True)
class Penalty:
    grouping: Grouping
    lam: float

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"penalty threshold must be nonnegative, got {self.lam}")
        object.__setattr__(self, "lam", float(self.lam))


def penalty_value(gamma: np.ndarray, p: Penalty) -> float:
    """lam * sum of group norms."""
    return p.lam * float(np.sum(p.grouping.group_norms(gamma)))


def prox(v: np.ndarray, p: Penalty, kappa: float = 1.0) -> np.ndarray:
    """Closed-form group shrinkage, scaled by kappa.

    Zero-norm groups map to zero directly rather than through 0/0.
    """
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    norms = p.grouping.group_norms(v)
    above = norms > p.lam
    safe = np.where(above, norms, 1.0)
    factors = np.where(above, 1.0 - p.lam / safe, 0.0)
    return p.grouping.scale_by_group(v, kappa * factors)


def _golden_min(f, lo, hi, tol):
    # golden-section search for a unimodal scalar function on [lo, hi]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def prox_oracle(v: np.ndarray, p: Penalty, kappa: float = 1.0) -> np.ndarray:
    """Reference prox by numeric minimization, for verification only.

    The minimizer of ``0.5 * ||g - v||^2 + lam * ||g||`` within one group is
    collinear with v, so a golden-section search over the radial magnitude
    localizes it without using the shrinkage formula.  Comparing function
    values cannot resolve the argmin past about sqrt(eps) of the scale, so
    a three-point parabola fit then recovers the vertex; the radial
    objective is exactly quadratic, which makes the fit exact up to the
    rounding of the three evaluations.
    """
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    norms = p.grouping.group_norms(v)
    mags = np.zeros_like(norms)
    for g, r in enumerate(norms):
        if r == 0.0:
            continue
        obj = lambda t: 0.5 * (t - r) ** 2 + p.lam * t
        t_star = _golden_min(obj, 0.0, r, tol=1e-13 * (1.0 + r))
        h = 1e-5 * (1.0 + r)
        if r >= 2.0 * h:
            m = min(max(t_star, h), r - h)
            f_lo, f_mid, f_hi = obj(m - h), obj(m), obj(m + h)
            denom = f_hi - 2.0 * f_mid + f_lo
            if denom > 0.0:
                t_star = min(max(m - 0.5 * h * (f_hi - f_lo) / denom, 0.0), r)
        # snap to the boundary when the vertex lands within noise of zero
        if obj(0.0) <= obj(t_star):
            t_star = 0.0
        mags[g] = t_star
    safe = np.where(norms > 0, norms, 1.0)
    return p.grouping.scale_by_group(v, kappa * mags / safe)


def dual_feasible(g: np.ndarray, p: Penalty, tol: float = 0.0) -> bool:
    """Is every group norm of ``g`` at most lam + tol?"""
    if tol < 0:
        raise ValueError(f"tolerance must be nonnegative, got {tol}")
    norms = p.grouping.group_norms(g)
    return bool(np.all(norms <= p.lam + tol))


def subgradient_residual(gamma_ref: np.ndarray, g_ref: np.ndarray, p: Penalty) -> float:
    """How far g_ref is from the subdifferential of the penalty at gamma_ref.

    Zero (up to rounding) iff g_ref is feasible and attains
    <g_ref, gamma_ref> = penalty_value(gamma_ref); positive otherwise.
    """
    norms = p.grouping.group_norms(g_ref)
    overshoot = float(max(np.max(norms) - p.lam, 0.0)) if norms.size else 0.0
    gap = penalty_value(gamma_ref, p) - float(np.sum(g_ref * gamma_ref))
    return max(overshoot, gap, 0.0)


def bregman_div(
    gamma: np.ndarray,
    gamma_ref: np.ndarray,
    g_ref: np.ndarray,
    p: Penalty,
    tol: float = 1e-6,
) -> float:
    """Bregman distance of the penalty between gamma and gamma_ref at g_ref.

    Requires g_ref to be a subgradient at gamma_ref (within ``tol``,
    relative to the threshold scale); rejects anything else because the
    divergence is meaningless, and possibly negative, off the subdifferential.
    """
    gmax = float(np.max(np.abs(gamma_ref))) if gamma_ref.size else 0.0
    resid = subgradient_residual(gamma_ref, g_ref, p)
    if resid > tol * max(p.lam * (1.0 + gmax), 1.0):
        raise ValueError(
            f"reference dual point is not a subgradient (residual {resid:.3e})"
        )
    return (
        penalty_value(gamma, p)
        - penalty_value(gamma_ref, p)
        - float(np.sum(g_ref * (gamma - gamma_ref)))
    )
