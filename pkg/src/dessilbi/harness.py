"""End-to-end runs: training loops, prune/retrain studies and baselines.

Everything here is deterministic given the config seed: initialization,
batch order, and generated data all derive from it, so a retrain that
reuses the seed replays the exact batch sequence of the run it prunes.
That determinism is what makes the same-init ticket comparisons exact
rather than statistical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, make_dataset
from .monitor import Monitor, MonitorConfig, power_iteration_lipschitz, probe_lipschitz
from .nets import Network, NonFiniteError, he_init
from .optimizer import (HyperParams, OptimizerState, SplitPolicy, init_state,
                        save_state, split_all, step)
from .paths import PathRecord, record_epoch, records_to_csv, records_to_json, \
    support_mask
from .lasso import entry_index, lasso_path, ranking_auc


class TrainingDiverged(RuntimeError):
    """Loss or gradients went non-finite; carries whatever was recorded."""

    def __init__(self, msg, records):
        super().__init__(msg)
        self.records = records


class DegenerateMaskError(ValueError):
    """A mask would zero out an entire layer; retraining it is meaningless."""


# ---------------------------------------------------------------------------
# plumbing


def adapt_inputs(net: Network, x: np.ndarray) -> np.ndarray:
    """Reshape raw samples to the network's per-sample input shape."""
    want = net.input_shape
    if x.shape[1:] == want:
        return x
    if int(np.prod(x.shape[1:])) == int(np.prod(want)):
        return x.reshape((x.shape[0],) + want)
    raise ValueError(
        f"samples of shape {x.shape[1:]} cannot feed an input of shape {want}"
    )


def adapt_dataset(net: Network, ds: Dataset) -> Dataset:
    return Dataset(
        adapt_inputs(net, ds.train_x), ds.train_y,
        adapt_inputs(net, ds.val_x), ds.val_y,
        beta_star=ds.beta_star,
    )


def _batches(n: int, batch_size: int | None, seed: int, epoch: int):
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    order = np.random.default_rng([seed, 7919, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _project_masked(state: OptimizerState, mask: dict | None) -> None:
    if not mask:
        return
    for li, gm in mask.items():
        keep = gm.dense()
        wi = state.net.weight_index(li)
        state.net.set_param(wi, state.weight(li) * keep)


@dataclass
class RunResult:
    config: "ExperimentConfig"
    records: list
    state: OptimizerState
    dataset: Dataset
    snapshots: dict = field(default_factory=dict)  # epoch -> OptimizerState
    monitor: Monitor | None = None
    run_dir: Path | None = None

    @property
    def final(self) -> PathRecord:
        return self.records[-1]

    def gamma_sparsity(self) -> float:
        """Overall fraction of nonzero companion entries, across split layers."""
        total = nz = 0
        for li in self.state.split.layers():
            g = self.state.gamma[li]
            total += g.size
            nz += int(np.count_nonzero(g))
        if total == 0:
            raise ValueError("run has no split layers, so no sparsity to report")
        return nz / total


# ---------------------------------------------------------------------------
# the training loop


def _build_split(config, net: Network) -> SplitPolicy:
    if config.split_layers == "none":
        return SplitPolicy()
    overrides = dict(config.lam_overrides)
    if config.split_layers == "all":
        return split_all(net, config.lam, config.dense_scheme, config.conv_scheme,
                         overrides)
    pens = split_all(net, config.lam, config.dense_scheme, config.conv_scheme,
                     overrides).penalties
    chosen = {li: pens[li] for li in config.split_layers}
    for li in config.split_layers:
        if li not in pens:
            raise ValueError(f"layer {li} is not splittable")
    return SplitPolicy(chosen)


def _monitor_for(config, net: Network, ds: Dataset, hp: HyperParams) -> Monitor:
    if config.batch_size is not None and config.batch_size < ds.n_train:
        raise ValueError("the convergence monitor needs full-batch steps")
    lip = config.monitor_lip
    if lip is None:
        dense_only = [l for l in net.layers if l.kind != "flatten"]
        if net.loss == "mse" and len(dense_only) == 1 and dense_only[0].kind == "dense":
            lip = power_iteration_lipschitz(ds.train_x.reshape(ds.train_x.shape[0], -1))
        else:
            lip = probe_lipschitz(net, (ds.train_x, ds.train_y))
    return Monitor(MonitorConfig(lip=lip), hp)


def train(config, out_dir=None, keep_epochs=(), render: bool = False,
          initial_state: OptimizerState | None = None,
          mask: dict | None = None) -> RunResult:
    """Run a full experiment; returns records, final state and snapshots.

    ``keep_epochs`` asks for in-memory state snapshots at those epochs (the
    init at epoch 0 is always kept).  ``initial_state`` and ``mask`` exist
    for the prune/retrain flows: a mask keeps the named coordinates frozen
    at exact zero through every step.  On divergence the partial records
    are flushed to ``out_dir`` (when given) before the exception leaves.
    """
    if config.epochs < 0:
        raise ValueError(f"epochs must be nonnegative, got {config.epochs}")
    hp = config.hp
    dataset = make_dataset(config.dataset)
    if initial_state is None:
        net = he_init(build_network_from_config(config), config.seed)
        split = _build_split(config, net)
        state = init_state(net, split)
    else:
        state = initial_state.snapshot()
    dataset = adapt_dataset(state.net, dataset)
    _project_masked(state, mask)

    mon = _monitor_for(config, state.net, dataset, hp) if config.monitor else None
    full_batch = (dataset.train_x, dataset.train_y)
    if mon is not None:
        mon.start(state, full_batch)

    keep = {0} | {int(e) for e in keep_epochs} | set(config.checkpoint_epochs)
    snapshots = {0: state.snapshot()}
    records = [record_epoch(state, dataset, 0)]
    result = RunResult(config, records, state, dataset, snapshots, mon)

    for epoch in range(config.epochs):
        state.epoch = epoch
        try:
            for idx in _batches(dataset.n_train, config.batch_size, config.seed, epoch):
                batch = (dataset.train_x[idx], dataset.train_y[idx])
                step(state, batch, hp)
                _project_masked(state, mask)
                if mon is not None:
                    mon.after_step(state, full_batch)
            records.append(record_epoch(state, dataset, epoch + 1))
        except NonFiniteError as e:
            if out_dir is not None:
                _write_artifacts(result, out_dir, render=False)
            raise TrainingDiverged(f"run diverged in epoch {epoch}: {e}", records) from e
        if epoch + 1 in keep:
            snapshots[epoch + 1] = state.snapshot()

    if out_dir is not None:
        result.run_dir = _write_artifacts(result, out_dir, render)
    return result


def _write_artifacts(result: RunResult, out_dir, render: bool) -> Path:
    from .config import emit_config

    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(emit_config(result.config))
    records_to_csv(result.records, run_dir / "path.csv")
    records_to_json(result.records, run_dir / "path.json")
    if result.monitor is not None:
        result.monitor.to_csv(run_dir / "monitor.csv")
    ck = run_dir / "checkpoints"
    wanted = set(result.config.checkpoint_epochs) & set(result.snapshots)
    if wanted:
        ck.mkdir(exist_ok=True)
        for e in sorted(wanted):
            save_state(result.snapshots[e], ck / f"epoch{e:04d}.ckpt")
    if render:
        from .figures import render_run

        render_run(result, run_dir)
    return run_dir


def build_network_from_config(config) -> Network:
    from .nets import build_network

    return build_network(config.input_shape, config.layer_specs, config.loss)


# ---------------------------------------------------------------------------
# prune / retrain / rewind


@dataclass(frozen=True)
class RetrainPlan:
    """What to prune and how long to retrain.

    ``mask_epoch`` picks which companion support becomes the mask;
    ``rewind_epoch`` picks the weights the retrain starts from (0 means the
    original init, the same-init ticket setting); ``budget_epochs`` is the
    retrain length.  Splitting stays off during retraining unless
    ``keep_split`` asks for it.
    """

    mask_epoch: int
    budget_epochs: int
    rewind_epoch: int = 0
    keep_split: bool = False

    def __post_init__(self):
        if self.mask_epoch < 0 or self.rewind_epoch < 0 or self.budget_epochs < 0:
            raise ValueError("plan epochs must be nonnegative")


@dataclass
class PruneReport:
    dense: RunResult
    sparse: RunResult
    mask: dict
    mask_density: float

    def accuracy_gap(self) -> float:
        """Dense minus sparse final validation accuracy (positive = dense ahead)."""
        return self.dense.final.val_acc - self.sparse.final.val_acc


def mask_from_state(state: OptimizerState) -> dict:
    mask = {}
    for li in state.split.layers():
        gm = support_mask(state.gamma[li], state.split.penalty(li).grouping)
        if gm.n_active == 0:
            raise DegenerateMaskError(
                f"layer {li} has no active groups at the mask epoch; "
                "there is nothing left to retrain"
            )
        mask[li] = gm
    if not mask:
        raise DegenerateMaskError("no split layers, so no mask can be built")
    return mask


def _mask_density(mask: dict) -> float:
    total = kept = 0
    for gm in mask.values():
        dense = gm.dense()
        total += dense.size
        kept += int(np.count_nonzero(dense))
    return kept / total


def _retrain(config, dense_result: RunResult, plan: RetrainPlan) -> tuple:
    if plan.mask_epoch not in dense_result.snapshots:
        raise ValueError(f"dense run kept no snapshot at mask epoch {plan.mask_epoch}")
    if plan.rewind_epoch not in dense_result.snapshots:
        raise ValueError(f"dense run kept no snapshot at rewind epoch {plan.rewind_epoch}")
    mask = mask_from_state(dense_result.snapshots[plan.mask_epoch])
    start = dense_result.snapshots[plan.rewind_epoch]
    retrain_config = replace(config, epochs=plan.budget_epochs,
                             split_layers=config.split_layers if plan.keep_split else "none")
    init = init_state(start.net.clone(), _build_split(retrain_config, start.net))
    sparse = train(retrain_config, initial_state=init, mask=mask)
    return sparse, mask


def one_shot_prune_retrain(config, plan: RetrainPlan,
                           dense_result: RunResult | None = None) -> PruneReport:
    """Train dense, mask by companion support, retrain from the original init."""
    if plan.rewind_epoch != 0:
        raise ValueError("one-shot pruning retrains from the init; use fine_tune_rewind")
    if dense_result is None:
        dense_result = train(config, keep_epochs={plan.mask_epoch})
    sparse, mask = _retrain(config, dense_result, plan)
    return PruneReport(dense_result, sparse, mask, _mask_density(mask))


def fine_tune_rewind(config, plan: RetrainPlan,
                     dense_result: RunResult | None = None) -> PruneReport:
    """Mask at one epoch, restart the weights from another, fine-tune."""
    if dense_result is None:
        dense_result = train(config, keep_epochs={plan.mask_epoch, plan.rewind_epoch})
    sparse, mask = _retrain(config, dense_result, plan)
    return PruneReport(dense_result, sparse, mask, _mask_density(mask))


# ---------------------------------------------------------------------------
# plain-SGD baselines

BASELINE_VARIANTS = ("plain", "mom", "mom_wd", "l1")


def sgd_baseline(config, variant: str = "plain", l1_lam: float = 1e-3) -> RunResult:
    """Reference descent without the split: SGD with optional frills.

    Uses the same schedule, init and batch order as the split runs so
    comparisons isolate the optimizer, not the pipeline.  The ``l1``
    variant adds a subgradient of an L1 penalty to every weight gradient.
    """
    if variant not in BASELINE_VARIANTS:
        raise ValueError(f"unknown baseline {variant!r}, expected one of {BASELINE_VARIANTS}")
    from .nets import loss_and_grad

    hp = config.hp
    dataset = make_dataset(config.dataset)
    net = he_init(build_network_from_config(config), config.seed)
    dataset = adapt_dataset(net, dataset)
    state = init_state(net, SplitPolicy())
    records = [record_epoch(state, dataset, 0)]
    velocity = None
    from .optimizer import lr_schedule

    for epoch in range(config.epochs):
        alpha = lr_schedule(hp, epoch)
        for idx in _batches(dataset.n_train, config.batch_size, config.seed, epoch):
            x, y = dataset.train_x[idx], dataset.train_y[idx]
            _, grads = loss_and_grad(net, x, y)
            if variant == "l1":
                grads = [g + l1_lam * np.sign(p)
                         for g, p in zip(grads, net.param_arrays())]
            if variant in ("mom", "mom_wd"):
                if velocity is None:
                    velocity = [np.zeros_like(g) for g in grads]
                velocity = [hp.momentum_tau * v + g for v, g in zip(velocity, grads)]
                use = velocity
            else:
                use = grads
            beta = hp.weight_decay_beta if variant == "mom_wd" else 0.0
            for i, (p, g) in enumerate(zip(net.param_arrays(), use)):
                net.set_param(i, p - hp.kappa * alpha * g - beta * p)
        records.append(record_epoch(state, dataset, epoch + 1))
    return RunResult(config, records, state, dataset)


# ---------------------------------------------------------------------------
# support recovery vs the L1 path oracle


def entry_epochs(records: list, layer: int) -> np.ndarray:
    """Per-group first-activation epoch from a record list; inf if never."""
    n_groups = len(records[0].support[layer])
    out = np.full(n_groups, np.inf)
    for rec in records:
        sup = np.asarray(rec.support[layer], dtype=bool)
        fresh = np.isinf(out) & sup
        out[fresh] = rec.epoch
    return out


def support_recovery_score(result: RunResult) -> float:
    """How well companion activation order separates true from null features.

    Defined for single-split-layer runs on the synthetic sparse regression
    data (the run must know the true coefficients).  Returns the
    probability that a truly nonzero coordinate activates before a null
    one, counting ties half, so 1.0 is perfect ordering and 0.5 is chance.
    """
    if result.dataset.beta_star is None:
        raise ValueError("support recovery needs the generating coefficients; "
                         "use the sparse_linear dataset")
    layers = result.state.split.layers()
    if len(layers) != 1:
        raise ValueError(f"expected exactly one split layer, got {layers}")
    li = layers[0]
    grouping = result.state.split.penalty(li).grouping
    beta = result.dataset.beta_star
    if grouping.scheme != "per_element" or grouping.shape != (1, beta.size):
        raise ValueError(
            "recovery scoring expects per-element groups over a (1, p) weight"
        )
    entries = entry_epochs(result.records, li)
    true_idx = np.nonzero(beta)[0]
    false_idx = np.nonzero(beta == 0)[0]
    return ranking_auc(entries[true_idx], entries[false_idx])


def lasso_oracle_score(result: RunResult, n_lams: int = 50, gap_tol: float = 1e-8) -> float:
    """Same ranking score, but from the L1 path of an independent solver."""
    ds = result.dataset
    if ds.beta_star is None:
        raise ValueError("oracle comparison needs the generating coefficients")
    x = ds.train_x.reshape(ds.train_x.shape[0], -1)
    y = ds.train_y.reshape(-1)
    _, weights = lasso_path(x, y, n_lams=n_lams, gap_tol=gap_tol)
    entries = entry_index(weights)
    beta = ds.beta_star
    return ranking_auc(entries[np.nonzero(beta)[0]], entries[np.nonzero(beta == 0)[0]])


# ---------------------------------------------------------------------------
# hyperparameter grid


def run_kappa_nu_grid(base_config, kappas, nus, seeds, kappa_alpha: float = 0.1):
    """Final sparsity and accuracy over a (kappa, nu) grid.

    Holds the product kappa * alpha fixed so every cell moves W at the same
    effective rate and only the threshold dynamics differ.  Returns a list
    of row dicts, one per (kappa, nu, seed).
    """
    rows = []
    for kappa in kappas:
        alpha = kappa_alpha / kappa
        for nu in nus:
            for seed in seeds:
                hp = replace(base_config.hp, kappa=float(kappa), nu=float(nu),
                             alpha_schedule=((0, alpha),))
                cfg = replace(base_config, hp=hp, seed=int(seed))
                res = train(cfg)
                rows.append({
                    "kappa": float(kappa),
                    "nu": float(nu),
                    "seed": int(seed),
                    "gamma_sparsity": res.gamma_sparsity(),
                    "val_loss": res.final.val_loss,
                    "val_acc": res.final.val_acc,
                })
    return rows


def grid_means(rows, key: str = "gamma_sparsity") -> dict:
    """Average the per-seed grid rows into {(kappa, nu): mean}."""
    acc: dict = {}
    for row in rows:
        acc.setdefault((row["kappa"], row["nu"]), []).append(row[key])
    return {cell: float(np.mean(vals)) for cell, vals in acc.items()}
