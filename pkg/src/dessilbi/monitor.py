"""Runtime convergence certificates for plain full-batch training.

The monitored quantity is the Lyapunov function

    F_k = alpha * Lbar(W_k, Gamma_k) + B(Gamma_k, Gamma_{k-1}; g_{k-1})

where Lbar is the augmented loss and B the penalty's Bregman distance at
the previous dual iterate.  For step sizes below ``stepsize_bound`` the
iteration must obey, step by step,

    sufficient descent   F_{k+1} <= F_k - rho * ||P_{k+1} - P_k||^2
    relative error       ||H_{k+1}|| <= rho1 * ||Q_{k+1} - Q_k||

with P = (W, Gamma) the primal block, Q_k = (P_k, g_{k-1}) the primal
block joined with the dual step of the preceding transition,
rho = 1/kappa - alpha (lip + 1/nu) / 2 and
rho1 = 2/kappa + 1 + alpha (lip + 2/nu), H stacking the augmented
gradients and the Gamma increment.  The descent certificate charges only
the primal movement: during stretches where the mirror variable sits at
zero and accumulates dual mass, ||delta Q|| stays bounded away from zero
while F barely moves, so a quadratic charge on the full state would flag
perfectly healthy steps.  Violations beyond a rounding slack mean the run
left the regime the certificates cover (step size too large, wrong
Lipschitz estimate, non-smooth network, or mini-batching).

Checks only apply to the plain variant on a fixed batch with a smooth
network; the monitor enforces what it can see and documents the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import loss_and_grad
from .optimizer import HyperParams, OptimizerState, augmented_loss, current_dual, \
    grad_augmented, lr_schedule
from .penalties import bregman_div


class MonitorError(ValueError):
    pass


@dataclass(frozen=True)
class MonitorConfig:
    lip: float
    slack_scale: float = 1e-8

    def __post_init__(self):
        if not (np.isfinite(self.lip) and self.lip >= 0):
            raise MonitorError(f"Lipschitz estimate must be finite and nonnegative, got {self.lip}")
        if self.slack_scale < 0:
            raise MonitorError(f"slack scale must be nonnegative, got {self.slack_scale}")


@dataclass
class LyapunovRecord:
    k: int
    F: float
    delta_Q: float
    H_norm: float
    rho: float
    rho1: float
    descent_ok: bool
    relerr_ok: bool
    delta_P: float = 0.0  # descent/rate distance; not part of the CSV schema

CSV_HEADER = "k,F,delta_Q,H_norm,rho,rho1,descent_ok,relerr_ok"


def descent_margin(hp: HyperParams, lip: float, alpha: float) -> float:
    """rho for the current step size; positive inside the guaranteed regime."""
    return 1.0 / hp.kappa - alpha * (lip + 1.0 / hp.nu) / 2.0


def relative_error_bound(hp: HyperParams, lip: float, alpha: float) -> float:
    return 2.0 / hp.kappa + 1.0 + alpha * (lip + 2.0 / hp.nu)


def check_sufficient_descent(f_prev: float, f_new: float, delta_p: float,
                             rho: float, slack: float = 0.0) -> bool:
    """Did this transition shed at least rho * ||delta P||^2 of F?

    The charged distance is the primal movement (weights and mirror), not
    the full state distance; see the module docstring for why.  Rejects
    rho <= 0 outright: the certificate says nothing there, and silently
    passing would dress divergence up as success.
    """
    if rho <= 0:
        raise MonitorError(
            f"descent margin rho = {rho:.3e} is not positive; "
            "the step size lies outside the certified regime"
        )
    return f_new <= f_prev - rho * delta_p * delta_p + slack


def check_relative_error(h_norm: float, delta_q: float, rho1: float,
                         slack: float = 0.0) -> bool:
    return h_norm <= rho1 * delta_q + slack


class Monitor:
    """Accumulates per-step Lyapunov records for a plain full-batch run.

    Call :meth:`start` once with the initial state and the (fixed) batch,
    then :meth:`after_step` after every optimizer step with the same batch.
    The monitor re-evaluates the augmented gradient at each new point, so
    it roughly doubles the cost of a run; it is a desk-scale instrument.
    """

    def __init__(self, config: MonitorConfig, hp: HyperParams):
        if hp.variant != "naive":
            raise MonitorError(
                f"convergence certificates cover the plain variant only, got {hp.variant!r}"
            )
        self.config = config
        self.hp = hp
        self.records: list[LyapunovRecord] = []
        self._prev = None
        self._batch = None
        self.initial_loss_aug = None
        self.initial_alpha = None
        self._alpha_history: list[float] = []

    def start(self, state: OptimizerState, batch) -> LyapunovRecord:
        if not state.net.smooth:
            raise MonitorError(
                "network is not smooth (relu or maxpool present); "
                "certificates need differentiable pieces throughout"
            )
        x, y = batch
        self._batch = (np.array(x, dtype=np.float64, copy=True), np.array(y, copy=True))
        alpha = lr_schedule(self.hp, state.epoch)
        loss_aug = augmented_loss(state, batch, self.hp)
        self._prev = {
            "params": [p.copy() for p in state.net.param_arrays()],
            "gamma": {li: g.copy() for li, g in state.gamma.items()},
            "g": {li: current_dual(state, li, self.hp).copy() for li in state.split.layers()},
            "loss_aug": loss_aug,
            "breg": 0.0,
            "alpha": alpha,
            # squared dual movement of the transition that ended at this
            # state; Q pairs each primal point with the dual step behind it
            "dg2_last": 0.0,
        }
        self.initial_loss_aug = loss_aug
        self.initial_alpha = alpha
        rec = LyapunovRecord(
            k=state.step_count, F=alpha * loss_aug, delta_Q=0.0, H_norm=0.0,
            rho=descent_margin(self.hp, self.config.lip, alpha),
            rho1=relative_error_bound(self.hp, self.config.lip, alpha),
            descent_ok=True, relerr_ok=True,
        )
        self.records.append(rec)
        return rec

    def _check_same_batch(self, batch) -> None:
        x, y = batch
        bx, by = self._batch
        if not (np.array_equal(bx, np.asarray(x)) and np.array_equal(by, np.asarray(y))):
            raise MonitorError(
                "batch changed between steps; certificates require one fixed batch"
            )

    def after_step(self, state: OptimizerState, batch) -> LyapunovRecord:
        if self._prev is None:
            raise MonitorError("call start() with the initial state first")
        self._check_same_batch(batch)
        hp, lip = self.hp, self.config.lip
        prev = self._prev
        alpha = lr_schedule(hp, state.epoch)
        self._alpha_history.append(alpha)

        loss_aug = augmented_loss(state, batch, hp)
        breg = 0.0
        for li in state.split.layers():
            breg += bregman_div(
                state.gamma[li], prev["gamma"][li], prev["g"][li],
                state.split.penalty(li),
            )
        # both endpoints priced at the step's own alpha, so a schedule drop
        # between segments cannot masquerade as a descent violation
        f_prev = alpha * prev["loss_aug"] + prev["breg"]
        f_new = alpha * loss_aug + breg

        params = state.net.param_arrays()
        dw2 = sum(float(np.sum((a - b) ** 2)) for a, b in zip(params, prev["params"]))
        dg2 = 0.0
        dgamma2 = 0.0
        gs = {}
        for li in state.split.layers():
            gs[li] = current_dual(state, li, hp)
            dgamma2 += float(np.sum((state.gamma[li] - prev["gamma"][li]) ** 2))
            dg2 += float(np.sum((gs[li] - prev["g"][li]) ** 2))
        delta_p = np.sqrt(dw2 + dgamma2)
        delta_q = np.sqrt(dw2 + dgamma2 + prev["dg2_last"])

        gw, ggamma = grad_augmented(state, batch, hp)
        h2 = sum(float(np.sum((alpha * g) ** 2)) for g in gw)
        for li in state.split.layers():
            hg = alpha * ggamma[li] + gs[li] - prev["g"][li]
            h2 += float(np.sum(hg * hg))
            hz = prev["gamma"][li] - state.gamma[li]
            h2 += float(np.sum(hz * hz))
        h_norm = float(np.sqrt(h2))

        rho = descent_margin(hp, lip, alpha)
        rho1 = relative_error_bound(hp, lip, alpha)
        slack = self.config.slack_scale * (1.0 + abs(f_prev))
        if rho > 0:
            descent_ok = check_sufficient_descent(f_prev, f_new, delta_p, rho, slack)
        else:
            # outside the certified regime plain monotonicity is all that is
            # still necessary; rho is recorded as computed (nonpositive)
            descent_ok = f_new <= f_prev + slack
        relerr_ok = check_relative_error(h_norm, delta_q, rho1, slack)

        rec = LyapunovRecord(
            k=state.step_count, F=f_new, delta_Q=float(delta_q), H_norm=h_norm,
            rho=rho, rho1=rho1, descent_ok=descent_ok, relerr_ok=relerr_ok,
            delta_P=float(delta_p),
        )
        self.records.append(rec)
        self._prev = {
            "params": [p.copy() for p in params],
            "gamma": {li: g.copy() for li, g in state.gamma.items()},
            "g": {li: g.copy() for li, g in gs.items()},
            "loss_aug": loss_aug,
            "breg": breg,
            "alpha": alpha,
            "dg2_last": dg2,
        }
        return rec

    # -- aggregate checks ---------------------------------------------------

    def violations(self) -> tuple[int, int]:
        d = sum(1 for r in self.records if not r.descent_ok)
        e = sum(1 for r in self.records if not r.relerr_ok)
        return d, e

    def check_rate(self, K: int) -> tuple[float, float]:
        """Mean squared primal movement over the first K steps vs its bound.

        Returns (mean, bound) with the guarantee mean <= bound; valid only
        when one constant step size covered those K steps.
        """
        if K < 1:
            raise MonitorError(f"K must be at least 1, got {K}")
        if len(self.records) - 1 < K:
            raise MonitorError(f"only {len(self.records) - 1} transitions recorded, need {K}")
        alphas = set(self._alpha_history[:K])
        if len(alphas) != 1:
            raise MonitorError(f"step size changed within the first {K} steps: {sorted(alphas)}")
        alpha = self._alpha_history[0]
        rho = descent_margin(self.hp, self.config.lip, alpha)
        if rho <= 0:
            raise MonitorError(f"rate bound needs a positive margin, rho = {rho:.3e}")
        mean = float(np.mean([r.delta_P**2 for r in self.records[1 : K + 1]]))
        bound = alpha * self.initial_loss_aug / (rho * K)
        return mean, bound

    def to_csv(self, path) -> None:
        lines = [CSV_HEADER]
        for r in self.records:
            lines.append(
                f"{r.k},{r.F:.17g},{r.delta_Q:.17g},{r.H_norm:.17g},"
                f"{r.rho:.17g},{r.rho1:.17g},{int(r.descent_ok)},{int(r.relerr_ok)}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Lipschitz estimation


def power_iteration_lipschitz(x: np.ndarray, iters: int = 500, tol: float = 1e-13,
                              seed: int = 0) -> float:
    """Largest eigenvalue of X^T X / n by power iteration.

    This is the exact gradient Lipschitz constant of mean squared error for
    a linear model on design matrix X.
    """
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(p)
    z /= np.linalg.norm(z)
    lam = 0.0
    for _ in range(iters):
        w = x.T @ (x @ z) / n
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        z_new = w / nrm
        lam_new = float(z_new @ (x.T @ (x @ z_new)) / n)
        if abs(lam_new - lam) <= tol * max(1.0, lam_new):
            return lam_new
        lam, z = lam_new, z_new
    return lam


def probe_lipschitz(net, batch, probes: int = 20, eps: float = 1e-4,
                    seed: int = 0, safety: float = 10.0) -> float:
    """Crude curvature probe for non-quadratic losses.

    Samples finite-difference gradient variation along random directions
    around the current parameters and inflates the largest observed ratio
    by a safety factor.  An estimate, not a guarantee.
    """
    from .nets import Network  # noqa: F401  (typing aid only)

    x, y = batch
    rng = np.random.default_rng(seed)
    base = net.clone()
    _, g0 = loss_and_grad(base, x, y)
    worst = 0.0
    arrays = base.param_arrays()
    for _ in range(probes):
        direction = [rng.standard_normal(a.shape) for a in arrays]
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in direction))
        probe = base.clone()
        for i, (a, d) in enumerate(zip(arrays, direction)):
            probe.set_param(i, a + eps * d / norm)
        _, g1 = loss_and_grad(probe, x, y)
        diff = np.sqrt(sum(float(np.sum((b - a) ** 2)) for a, b in zip(g0, g1)))
        worst = max(worst, diff / eps)
    return safety * worst
