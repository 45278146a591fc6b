"""Split-variable training steps with inverse-scale-space sparsification.

Each penalized weight tensor W gets a lifted companion Gamma plus an
accumulator V.  The augmented objective couples them through a quadratic
term ||W - Gamma||^2 / (2 nu); W follows its gradient at rate kappa*alpha,
V integrates the Gamma-gradient at rate alpha, and Gamma is read off V
through the scaled proximal map.  Groups of Gamma therefore stay exactly
zero until V accumulates enough evidence, which is what produces the
inverse-scale-space ordering the path tracker records.

``step_reformulated`` runs the same dynamics in the equivalent
prox-plus-dual form and exists to cross-check ``step_naive`` trajectories
to floating-point accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .nets import Network, loss_and_grad
from .penalties import Grouping, Penalty, prox

VARIANTS = ("naive", "mom", "mom_wd", "reformulated")


def default_schedule(alpha0: float = 0.1, drop_every: int = 30, factor: float = 0.1,
                     n_drops: int = 3) -> tuple:
    """Step-size schedule that divides alpha by 10 every ``drop_every`` epochs."""
    if not alpha0 > 0:
        raise ValueError(f"alpha0 must be positive, got {alpha0}")
    if drop_every < 1 or n_drops < 0:
        raise ValueError("drop_every must be >= 1 and n_drops >= 0")
    return tuple((i * drop_every, alpha0 * factor**i) for i in range(n_drops + 1))


@dataclass(frozen=True)
class HyperParams:
    """Knobs shared by every variant; per-layer thresholds live in SplitPolicy."""

    kappa: float = 1.0
    nu: float = 10.0
    alpha_schedule: tuple = ((0, 0.1),)
    momentum_tau: float = 0.9
    weight_decay_beta: float = 1e-4
    variant: str = "naive"

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not 0 <= self.momentum_tau < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum_tau}")
        if not self.weight_decay_beta >= 0:
            raise ValueError(f"weight decay must be nonnegative, got {self.weight_decay_beta}")
        sched = tuple((int(e), float(a)) for e, a in self.alpha_schedule)
        if not sched:
            raise ValueError("alpha_schedule must not be empty")
        if sched[0][0] != 0:
            raise ValueError(f"alpha_schedule must start at epoch 0, got {sched[0][0]}")
        epochs = [e for e, _ in sched]
        if epochs != sorted(set(epochs)):
            raise ValueError(f"schedule epochs must be strictly increasing, got {epochs}")
        if any(not a > 0 for _, a in sched):
            raise ValueError("every scheduled alpha must be positive")
        object.__setattr__(self, "alpha_schedule", sched)


def lr_schedule(hp: HyperParams, epoch: int) -> float:
    """Step size in force at a given epoch (piecewise constant)."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    alpha = hp.alpha_schedule[0][1]
    for e, a in hp.alpha_schedule:
        if e <= epoch:
            alpha = a
    return alpha


def stepsize_bound(lip: float, hp: HyperParams) -> float:
    """Largest alpha with a positive descent margin: 2 / (kappa (lip + 1/nu))."""
    if not (np.isfinite(lip) and lip >= 0):
        raise ValueError(f"Lipschitz estimate must be finite and nonnegative, got {lip}")
    return 2.0 / (hp.kappa * (lip + 1.0 / hp.nu))


@dataclass(frozen=True)
class SplitPolicy:
    """Which layers carry a lifted Gamma, and under which penalty."""

    penalties: dict = field(default_factory=dict)

    def layers(self):
        return sorted(self.penalties)

    def penalty(self, layer_index: int) -> Penalty:
        return self.penalties[layer_index]

    def validate(self, net: Network) -> None:
        for li, pen in self.penalties.items():
            if not 0 <= li < len(net.layers):
                raise ValueError(f"split policy names layer {li}, network has {len(net.layers)}")
            layer = net.layers[li]
            if layer.kind not in ("dense", "conv2d"):
                raise ValueError(
                    f"layer {li} ({layer.kind}) has no weight tensor to split"
                )
            if pen.grouping.shape != layer.params[0].shape:
                raise ValueError(
                    f"penalty grouping shape {pen.grouping.shape} does not match "
                    f"layer {li} weights {layer.params[0].shape}"
                )


def split_all(net: Network, lam: float, dense_scheme: str = "per_element",
              conv_scheme: str = "per_filter",
              lam_overrides: dict | None = None) -> SplitPolicy:
    """Split every dense and conv layer with one threshold (plus overrides)."""
    pens = {}
    for li, layer in enumerate(net.layers):
        if layer.kind not in ("dense", "conv2d"):
            continue
        scheme = conv_scheme if layer.kind == "conv2d" else dense_scheme
        lam_i = (lam_overrides or {}).get(li, lam)
        pens[li] = Penalty(Grouping(scheme, layer.params[0].shape), lam_i)
    policy = SplitPolicy(pens)
    policy.validate(net)
    return policy


class OptimizerState:
    """Owns the network plus all per-layer companion tensors.

    Steps mutate the state in place and return it; use :meth:`snapshot`
    when an immutable copy is needed (the convergence monitor does).
    """

    def __init__(self, net: Network, split: SplitPolicy):
        split.validate(net)
        self.net = net
        self.split = split
        self.gamma = {li: np.zeros_like(net.layers[li].params[0]) for li in split.layers()}
        self.v = {li: np.zeros_like(net.layers[li].params[0]) for li in split.layers()}
        self.velocity: dict = {}
        self.dual: dict = {}
        self.step_count = 0
        self.epoch = 0

    def weight(self, layer_index: int) -> np.ndarray:
        return self.net.layers[layer_index].params[0]

    def snapshot(self) -> "OptimizerState":
        other = OptimizerState.__new__(OptimizerState)
        other.net = self.net.clone()
        other.split = self.split
        other.gamma = {k: v.copy() for k, v in self.gamma.items()}
        other.v = {k: v.copy() for k, v in self.v.items()}
        other.velocity = {k: v.copy() for k, v in self.velocity.items()}
        other.dual = {k: v.copy() for k, v in self.dual.items()}
        other.step_count = self.step_count
        other.epoch = self.epoch
        return other


def init_state(net: Network, split: SplitPolicy | None = None) -> OptimizerState:
    """Fresh state: Gamma and V start at zero, so every group starts inactive."""
    return OptimizerState(net, split if split is not None else SplitPolicy())


def current_dual(state: OptimizerState, layer_index: int, hp: HyperParams) -> np.ndarray:
    """Dual iterate g = V - Gamma / kappa (stored explicitly by the prox-dual form)."""
    if layer_index in state.dual:
        return state.dual[layer_index]
    return state.v[layer_index] - state.gamma[layer_index] / hp.kappa


def augmented_loss(state: OptimizerState, batch, hp: HyperParams) -> float:
    """Data loss plus the coupling term sum ||W - Gamma||^2 / (2 nu)."""
    from .nets import forward

    x, y = batch
    loss, _ = forward(state.net, x, y)
    for li in state.split.layers():
        d = state.weight(li) - state.gamma[li]
        loss += float(np.sum(d * d)) / (2.0 * hp.nu)
    return loss


def grad_augmented(state: OptimizerState, batch, hp: HyperParams):
    """Gradients of the augmented loss.

    Returns (gw, ggamma): ``gw`` is a flat list over all network parameters
    with the coupling term added on split weights; ``ggamma`` maps each
    split layer to (Gamma - W) / nu.
    """
    x, y = batch
    _, gw = loss_and_grad(state.net, x, y)
    ggamma = {}
    for li in state.split.layers():
        wi = state.net.weight_index(li)
        d = (state.weight(li) - state.gamma[li]) / hp.nu
        gw[wi] = gw[wi] + d
        ggamma[li] = -d
    return gw, ggamma


def _require_variant(hp: HyperParams, expected: str) -> None:
    if hp.variant != expected:
        raise ValueError(
            f"step for variant {expected!r} called with hyperparameters "
            f"tagged {hp.variant!r}"
        )


def _apply_w(state: OptimizerState, updates: list) -> None:
    for i, arr in enumerate(updates):
        state.net.set_param(i, arr)


def _prox_update(state: OptimizerState, ggamma: dict, alpha: float, hp: HyperParams) -> None:
    for li in state.split.layers():
        pen = state.split.penalty(li)
        state.v[li] = state.v[li] - alpha * ggamma[li]
        state.gamma[li] = prox(state.v[li], pen, hp.kappa)


def step_naive(state: OptimizerState, batch, hp: HyperParams) -> OptimizerState:
    """One plain step: W by gradient descent at kappa*alpha, V by alpha, Gamma by prox."""
    _require_variant(hp, "naive")
    alpha = lr_schedule(hp, state.epoch)
    gw, ggamma = grad_augmented(state, batch, hp)
    _apply_w(state, [w - hp.kappa * alpha * g for w, g in zip(state.net.param_arrays(), gw)])
    _prox_update(state, ggamma, alpha, hp)
    state.step_count += 1
    return state


def _momentum_grads(state: OptimizerState, gw: list, tau: float) -> list:
    vel = []
    for i, g in enumerate(gw):
        prev = state.velocity.get(i)
        cur = tau * prev + g if prev is not None else g.copy()
        state.velocity[i] = cur
        vel.append(cur)
    return vel


def step_momentum(state: OptimizerState, batch, hp: HyperParams) -> OptimizerState:
    """Heavy-ball variant: velocity accumulates the W-gradient; Gamma/V unchanged."""
    _require_variant(hp, "mom")
    alpha = lr_schedule(hp, state.epoch)
    gw, ggamma = grad_augmented(state, batch, hp)
    vel = _momentum_grads(state, gw, hp.momentum_tau)
    _apply_w(state, [w - hp.kappa * alpha * v for w, v in zip(state.net.param_arrays(), vel)])
    _prox_update(state, ggamma, alpha, hp)
    state.step_count += 1
    return state


def step_momentum_wd(state: OptimizerState, batch, hp: HyperParams) -> OptimizerState:
    """Momentum plus decoupled weight decay on W only; Gamma and V never decay."""
    _require_variant(hp, "mom_wd")
    alpha = lr_schedule(hp, state.epoch)
    gw, ggamma = grad_augmented(state, batch, hp)
    vel = _momentum_grads(state, gw, hp.momentum_tau)
    beta = hp.weight_decay_beta
    _apply_w(
        state,
        [w - hp.kappa * alpha * v - beta * w for w, v in zip(state.net.param_arrays(), vel)],
    )
    _prox_update(state, ggamma, alpha, hp)
    state.step_count += 1
    return state


def step_reformulated(state: OptimizerState, batch, hp: HyperParams) -> OptimizerState:
    """Equivalent prox-dual form of the plain step.

    Tracks the dual iterate g explicitly, updates Gamma through the prox of
    the kappa-scaled penalty, and keeps V = g + Gamma / kappa in sync so all
    path and feasibility probes read the same quantities as the plain form.
    """
    _require_variant(hp, "reformulated")
    alpha = lr_schedule(hp, state.epoch)
    if not state.dual:
        state.dual = {li: np.zeros_like(state.gamma[li]) for li in state.split.layers()}
    gw, ggamma = grad_augmented(state, batch, hp)
    _apply_w(state, [w - hp.kappa * alpha * g for w, g in zip(state.net.param_arrays(), gw)])
    for li in state.split.layers():
        pen = state.split.penalty(li)
        scaled = Penalty(pen.grouping, hp.kappa * pen.lam)
        g_old = state.dual[li]
        gamma_old = state.gamma[li]
        u = gamma_old + hp.kappa * (g_old - alpha * ggamma[li])
        gamma_new = prox(u, scaled, 1.0)
        state.dual[li] = g_old - (gamma_new - gamma_old + hp.kappa * alpha * ggamma[li]) / hp.kappa
        state.gamma[li] = gamma_new
        state.v[li] = state.dual[li] + gamma_new / hp.kappa
    state.step_count += 1
    return state


_STEP_FNS = {
    "naive": step_naive,
    "mom": step_momentum,
    "mom_wd": step_momentum_wd,
    "reformulated": step_reformulated,
}


def step(state: OptimizerState, batch, hp: HyperParams) -> OptimizerState:
    return _STEP_FNS[hp.variant](state, batch, hp)


# ---------------------------------------------------------------------------
# checkpointing


def state_entries(state: OptimizerState) -> dict:
    entries = {}
    for i, (li, slot, _) in enumerate(state.net.param_info()):
        entries[f"layer{li}/{slot}"] = state.net.param_arrays()[i]
        if i in state.velocity:
            entries[f"layer{li}/{slot}_velocity"] = state.velocity[i]
    for li in state.split.layers():
        entries[f"layer{li}/Gamma"] = state.gamma[li]
        entries[f"layer{li}/V"] = state.v[li]
        if li in state.dual:
            entries[f"layer{li}/g"] = state.dual[li]
    return entries


def save_state(state: OptimizerState, path, extra_meta: dict | None = None) -> None:
    meta = {"step_count": state.step_count, "epoch": state.epoch}
    meta.update(extra_meta or {})
    ckpt.save_checkpoint(path, state_entries(state), meta)


def load_state(net_template: Network, split: SplitPolicy, path) -> tuple[OptimizerState, dict]:
    """Rebuild a state onto a compatible architecture; bit-exact restore."""
    entries, meta = ckpt.load_checkpoint(path)
    state = init_state(net_template.clone(), split)
    for i, (li, slot, kind) in enumerate(state.net.param_info()):
        key = f"layer{li}/{slot}"
        if key not in entries:
            raise ckpt.CheckpointError(f"checkpoint lacks {key} for a {kind} layer")
        state.net.set_param(i, entries[key])
        vkey = f"{key}_velocity"
        if vkey in entries:
            state.velocity[i] = entries[vkey]
    for li in split.layers():
        gkey, vkey = f"layer{li}/Gamma", f"layer{li}/V"
        if gkey in entries:
            state.gamma[li] = entries[gkey]
        if vkey in entries:
            state.v[li] = entries[vkey]
        dkey = f"layer{li}/g"
        if dkey in entries:
            state.dual[li] = entries[dkey]
    state.step_count = int(meta.get("step_count", 0))
    state.epoch = int(meta.get("epoch", 0))
    return state, meta
