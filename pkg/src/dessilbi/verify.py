"""Self-contained correctness probes behind the ``verify`` subcommand.

Each suite returns (name, passed, detail).  These are the fast desk checks
of the core guarantees: prox against a numeric oracle, analytic gradients
against finite differences, the two step formulations against each other,
descent and relative-error certificates on a quadratic where the exact
curvature is known, and dual feasibility along a run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import dataset_spec, make_dataset
from .config import ExperimentConfig, emit_config, parse_config
from .monitor import Monitor, MonitorConfig, power_iteration_lipschitz
from .nets import backward, build_network, finite_diff_grad, he_init
from .optimizer import (HyperParams, current_dual, init_state, split_all,
                        step_naive, step_reformulated, stepsize_bound)
from .penalties import Grouping, Penalty, dual_feasible, prox, prox_oracle


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _boundary_vectors(rng, lam):
    """Group vectors whose norms sit exactly at and around the threshold."""
    out = []
    for target in (0.0, lam, lam - 1e-12, lam + 1e-12):
        v = rng.standard_normal(6)
        nrm = np.linalg.norm(v)
        out.append(v * (target / nrm) if nrm > 0 else v * 0.0)
    return out


def check_prox_oracle(cases: int = 200, seed: int = 0, tol: float = 1e-8) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(cases):
        lam = float(rng.uniform(0.05, 3.0))
        kappa = float(rng.choice([1.0, 2.0, 5.0]))
        if i % 2 == 0:
            shape = (4, 3, 3, 3)
            pen = Penalty(Grouping("per_filter", shape), lam)
            v = rng.standard_normal(shape) * rng.uniform(0.1, 4.0)
        else:
            shape = (5, 8)
            pen = Penalty(Grouping("per_element", shape), lam)
            v = rng.standard_normal(shape) * rng.uniform(0.1, 4.0)
        worst = max(worst, float(np.max(np.abs(
            prox(v, pen, kappa) - prox_oracle(v, pen, kappa)))))
        # boundary norms through a dedicated per-element penalty
        for b in _boundary_vectors(rng, lam):
            bp = Penalty(Grouping("per_filter", (1, 6, 1, 1)), lam)
            bv = b.reshape(1, 6, 1, 1)
            worst = max(worst, float(np.max(np.abs(
                prox(bv, bp, kappa) - prox_oracle(bv, bp, kappa)))))
    return SuiteResult("prox-vs-oracle", worst <= tol,
                       f"{cases} cases with boundary norms, max |diff| = {worst:.3e}")


_GRAD_NETS = [
    # layer specs, loss, input shape
    ((("dense:7", "tanh", "dense:3")), "softmax_cross_entropy", (5,)),
    ((("dense:6", "sigmoid", "dense:4", "softplus:2.5", "dense:2")), "mse", (4,)),
    ((("conv:3:3", "relu", "maxpool", "flatten", "dense:3")), "softmax_cross_entropy",
     (2, 6, 6)),
    ((("conv:2:3", "softplus", "flatten", "dense:5", "relu", "dense:5")), "mse", (1, 4, 4)),
]


def check_gradients(seeds=(0, 1, 2), tol: float = 1e-5) -> SuiteResult:
    worst = 0.0
    rng = np.random.default_rng(123)
    for seed in seeds:
        for specs, loss, in_shape in _GRAD_NETS:
            net = he_init(build_network(in_shape, specs, loss), seed)
            n = 6
            x = rng.standard_normal((n,) + in_shape)
            if loss == "mse":
                y = rng.standard_normal((n,) + net.output_shape)
            else:
                y = rng.integers(0, net.output_shape[0], size=n)
            exact = backward(net, x, y)
            approx = finite_diff_grad(net, x, y, h=1e-6)
            num = np.sqrt(sum(float(np.sum((a - b) ** 2)) for a, b in zip(exact, approx)))
            den = np.sqrt(sum(float(np.sum(a * a)) for a in exact))
            worst = max(worst, num / max(den, 1e-12))
    return SuiteResult("gradients-vs-finite-diff", worst <= tol,
                       f"{len(seeds)} seeds x {len(_GRAD_NETS)} nets, worst rel err = {worst:.3e}")


def _two_layer_setup(seed: int):
    net = he_init(build_network((6,), ("dense:5", "tanh", "dense:2"), "mse"), seed)
    split = split_all(net, lam=0.4, dense_scheme="per_element")
    rng = np.random.default_rng(seed + 1000)
    x = rng.standard_normal((12, 6))
    y = rng.standard_normal((12, 2))
    return net, split, (x, y)


def _conv_setup(seed: int):
    net = he_init(build_network((1, 5, 5), ("conv:3:3", "tanh", "flatten", "dense:2"),
                                "mse"), seed)
    split = split_all(net, lam=0.3, conv_scheme="per_filter")
    rng = np.random.default_rng(seed + 2000)
    x = rng.standard_normal((8, 1, 5, 5))
    y = rng.standard_normal((8, 2))
    return net, split, (x, y)


def check_formulations(iters: int = 100, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    worst = 0.0
    for setup in (_two_layer_setup, _conv_setup):
        net, split, batch = setup(seed)
        hp_a = HyperParams(kappa=2.0, nu=5.0, alpha_schedule=((0, 0.05),), variant="naive")
        hp_b = HyperParams(kappa=2.0, nu=5.0, alpha_schedule=((0, 0.05),),
                           variant="reformulated")
        sa = init_state(net.clone(), split)
        sb = init_state(net.clone(), split)
        for _ in range(iters):
            step_naive(sa, batch, hp_a)
            step_reformulated(sb, batch, hp_b)
            for pa, pb in zip(sa.net.param_arrays(), sb.net.param_arrays()):
                worst = max(worst, float(np.max(np.abs(pa - pb))))
            for li in split.layers():
                worst = max(worst, float(np.max(np.abs(sa.gamma[li] - sb.gamma[li]))))
                worst = max(worst, float(np.max(np.abs(sa.v[li] - sb.v[li]))))
    return SuiteResult("plain-vs-prox-dual-form", worst <= tol,
                       f"{iters} steps, dense and conv splits, max |state diff| = {worst:.3e}")


def _least_squares_config(n=120, p=30, alpha=None, seed=0):
    ds = dataset_spec("sparse_linear", n=n, p=p, s=5, snr=10.0, seed=seed,
                      val_fraction=0.0)
    data = make_dataset(ds)
    lip = power_iteration_lipschitz(data.train_x)
    hp = HyperParams(kappa=1.0, nu=10.0, alpha_schedule=((0, 0.1),), variant="naive")
    bound = stepsize_bound(lip, hp)
    alpha = alpha if alpha is not None else 0.9 * bound
    hp = HyperParams(kappa=1.0, nu=10.0, alpha_schedule=((0, alpha),), variant="naive")
    net = he_init(build_network((p,), ("dense:1:nobias",), "mse"), seed)
    split = split_all(net, lam=1.0, dense_scheme="per_element")
    state = init_state(net, split)
    return state, hp, (data.train_x, data.train_y), lip, bound


def check_monitor_positive(steps: int = 400, seed: int = 0) -> SuiteResult:
    state, hp, batch, lip, _ = _least_squares_config(seed=seed)
    mon = Monitor(MonitorConfig(lip=lip), hp)
    mon.start(state, batch)
    for _ in range(steps):
        step_naive(state, batch, hp)
        mon.after_step(state, batch)
    d, e = mon.violations()
    fs = [r.F for r in mon.records]
    monotone = all(b <= a + 1e-8 * (1 + abs(a)) for a, b in zip(fs, fs[1:]))
    mean, bound = mon.check_rate(steps)
    ok = d == 0 and e == 0 and monotone and mean <= bound
    return SuiteResult(
        "monitor-positive-control", ok,
        f"{steps} steps at 0.9x bound: {d} descent / {e} residual violations, "
        f"F monotone = {monotone}, rate {mean:.3e} <= {bound:.3e}",
    )


def check_monitor_negative(steps: int = 200, seed: int = 0) -> SuiteResult:
    state, _, batch, lip, bound = _least_squares_config(seed=seed)
    hp = HyperParams(kappa=1.0, nu=10.0, alpha_schedule=((0, 4.0 * bound),),
                     variant="naive")
    mon = Monitor(MonitorConfig(lip=lip), hp)
    mon.start(state, batch)
    violations = 0
    for _ in range(steps):
        try:
            step_naive(state, batch, hp)
            rec = mon.after_step(state, batch)
        except (FloatingPointError, ValueError):
            break
        if not (rec.descent_ok and rec.relerr_ok):
            violations += 1
    return SuiteResult("monitor-negative-control", violations >= 1,
                       f"4x overstep flagged {violations} violations")


def check_dual_feasibility(steps: int = 150, seed: int = 0, tol: float = 1e-9) -> SuiteResult:
    net, split, batch = _two_layer_setup(seed)
    hp = HyperParams(kappa=2.0, nu=5.0, alpha_schedule=((0, 0.05),), variant="naive")
    state = init_state(net, split)
    ok = True
    worst = 0.0
    for _ in range(steps):
        step_naive(state, batch, hp)
        for li in split.layers():
            g = current_dual(state, li, hp)
            pen = split.penalty(li)
            norms = pen.grouping.group_norms(g)
            worst = max(worst, float(np.max(norms)) - pen.lam)
            ok = ok and dual_feasible(g, pen, tol)
    return SuiteResult("dual-feasibility", ok,
                       f"{steps} steps, max excess over threshold = {worst:.3e}")


def check_config_roundtrip() -> SuiteResult:
    cfg = ExperimentConfig(
        dataset=dataset_spec("blobs", n=64, classes=3, dim=4, separation=2.0, seed=7),
        input_shape=(4,),
        layer_specs=("dense:8", "tanh", "dense:3"),
        loss="softmax_cross_entropy",
        hp=HyperParams(kappa=2.0, nu=100.0, alpha_schedule=((0, 0.05), (20, 0.005)),
                       variant="mom"),
        split_layers=(0,),
        lam=0.3,
        epochs=5,
        batch_size=None,
        checkpoint_epochs=(0, 5),
        name="roundtrip-probe",
    )
    again = parse_config(emit_config(cfg))
    ok = again == cfg
    return SuiteResult("config-roundtrip", ok, "parse(emit(config)) == config" if ok
                       else "round trip drifted")


ALL_SUITES = (
    check_prox_oracle,
    check_gradients,
    check_formulations,
    check_monitor_positive,
    check_monitor_negative,
    check_dual_feasibility,
    check_config_roundtrip,
)


def run_verification() -> list[SuiteResult]:
    return [suite() for suite in ALL_SUITES]
