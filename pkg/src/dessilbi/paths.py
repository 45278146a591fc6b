"""Support evolution along a training run.

Because the proximal map produces exact zeros, support is a crisp set, not
a thresholded one: a group is active iff it contains a bit-exact nonzero.
The records collected here power sparsity curves, the inverse-scale
ordering (important groups activate earlier), winning-ticket masks, and
the delimited exports; rendering lives elsewhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .nets import Network, forward
from .optimizer import OptimizerState
from .penalties import Grouping

CSV_SCHEMA = "dessilbi-path-v1"
JSON_SCHEMA = "dessilbi-path-v1"


def sparsity(t: np.ndarray) -> float:
    """Fraction of entries that are exactly nonzero."""
    if t.size == 0:
        raise ValueError("sparsity of an empty tensor is undefined")
    return float(np.count_nonzero(t)) / t.size


@dataclass(frozen=True)
class GroupMask:
    """Active groups of one split layer, stored per group, not per entry."""

    grouping: Grouping
    active: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.active, dtype=bool)
        if a.shape != (self.grouping.n_groups,):
            raise ValueError(
                f"mask has {a.shape} entries, grouping defines {self.grouping.n_groups} groups"
            )
        object.__setattr__(self, "active", a)

    def dense(self) -> np.ndarray:
        """Materialize as a boolean tensor of the full parameter shape."""
        return self.grouping.expand(self.active)

    def density(self) -> float:
        return float(np.count_nonzero(self.dense())) / int(np.prod(self.grouping.shape))

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))


def support_mask(gamma: np.ndarray, grouping: Grouping) -> GroupMask:
    return GroupMask(grouping, grouping.group_support(gamma))


def project_model(net: Network, mask: dict) -> Network:
    """Copy of the network with weights outside the mask set to zero."""
    out = net.clone()
    for li, gm in mask.items():
        layer = out.layers[li]
        if layer.kind not in ("dense", "conv2d"):
            raise ValueError(f"cannot project layer {li} ({layer.kind}); it has no weights")
        if gm.grouping.shape != layer.params[0].shape:
            raise ValueError(
                f"mask shape {gm.grouping.shape} does not match layer {li} "
                f"weights {layer.params[0].shape}"
            )
        layer.params[0] = layer.params[0] * gm.dense()
    return out


@dataclass
class PathRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float | None = None
    val_acc: float | None = None
    layer_sparsity: dict = field(default_factory=dict)
    gamma_norms: dict = field(default_factory=dict)   # layer -> per-group norms
    w_norms: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)       # layer -> per-group bools


def _accuracy(net: Network, x, y) -> float | None:
    if net.loss != "softmax_cross_entropy":
        return None
    _, out = forward(net, x, y)
    return float(np.mean(out.argmax(axis=1) == np.asarray(y)))


def record_epoch(state: OptimizerState, dataset, epoch: int) -> PathRecord:
    """Losses, accuracies and per-layer support of the current state."""
    net = state.net
    train_loss, _ = forward(net, dataset.train_x, dataset.train_y)
    val_loss, _ = forward(net, dataset.val_x, dataset.val_y)
    rec = PathRecord(
        epoch=int(epoch),
        train_loss=train_loss,
        val_loss=val_loss,
        train_acc=_accuracy(net, dataset.train_x, dataset.train_y),
        val_acc=_accuracy(net, dataset.val_x, dataset.val_y),
    )
    for li in state.split.layers():
        grouping = state.split.penalty(li).grouping
        gamma = state.gamma[li]
        rec.layer_sparsity[li] = sparsity(gamma)
        rec.gamma_norms[li] = grouping.group_norms(gamma).tolist()
        rec.w_norms[li] = grouping.group_norms(state.weight(li)).tolist()
        rec.support[li] = grouping.group_support(gamma).tolist()
    return rec


def inverse_scale_order(records: list) -> dict:
    """First activation epoch of every group, layer by layer.

    Returns {layer: [(group, epoch or None), ...]} sorted so that early
    entrants come first and groups that never activate trail with None.
    """
    if not records:
        raise ValueError("need at least one record to derive an activation order")
    epochs = [r.epoch for r in records]
    if epochs != sorted(epochs):
        raise ValueError("records must be ordered by epoch")
    out = {}
    for li in records[0].support:
        n_groups = len(records[0].support[li])
        entry = [None] * n_groups
        for rec in records:
            sup = rec.support[li]
            for g in range(n_groups):
                if entry[g] is None and sup[g]:
                    entry[g] = rec.epoch
        order = sorted(
            range(n_groups),
            key=lambda g: (entry[g] is None, entry[g] if entry[g] is not None else 0, g),
        )
        out[li] = [(g, entry[g]) for g in order]
    return out


# ---------------------------------------------------------------------------
# delimited exports


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.17g}"


def records_to_csv(records: list, path) -> None:
    """Per-epoch summary table: losses, accuracies, per-layer sparsity."""
    layers = sorted(records[0].layer_sparsity) if records else []
    header = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    header += [f"sparsity_layer{li}" for li in layers]
    lines = [f"# schema: {CSV_SCHEMA}", ",".join(header)]
    for r in records:
        row = [str(r.epoch), _fmt(r.train_loss), _fmt(r.train_acc),
               _fmt(r.val_loss), _fmt(r.val_acc)]
        row += [_fmt(r.layer_sparsity[li]) for li in layers]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def records_to_json(records: list, path=None) -> str:
    """Full trajectories (per-group magnitudes and support) as JSON."""
    doc = {"schema": JSON_SCHEMA, "records": []}
    for r in records:
        doc["records"].append({
            "epoch": r.epoch,
            "train_loss": r.train_loss,
            "val_loss": r.val_loss,
            "train_acc": r.train_acc,
            "val_acc": r.val_acc,
            "layer_sparsity": {str(k): v for k, v in r.layer_sparsity.items()},
            "gamma_norms": {str(k): v for k, v in r.gamma_norms.items()},
            "w_norms": {str(k): v for k, v in r.w_norms.items()},
            "support": {str(k): v for k, v in r.support.items()},
        })
    text = json.dumps(doc)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def records_from_json(source) -> list:
    """Inverse of :func:`records_to_json`; round trips are lossless."""
    if isinstance(source, (str, bytes)) and not str(source).lstrip().startswith("{"):
        with open(source) as fh:
            doc = json.load(fh)
    elif isinstance(source, (str, bytes)):
        doc = json.loads(source)
    else:
        doc = json.load(source)
    if doc.get("schema") != JSON_SCHEMA:
        raise ValueError(f"unknown path export schema {doc.get('schema')!r}")
    records = []
    for item in doc["records"]:
        records.append(PathRecord(
            epoch=int(item["epoch"]),
            train_loss=item["train_loss"],
            val_loss=item["val_loss"],
            train_acc=item["train_acc"],
            val_acc=item["val_acc"],
            layer_sparsity={int(k): v for k, v in item["layer_sparsity"].items()},
            gamma_norms={int(k): v for k, v in item["gamma_norms"].items()},
            w_norms={int(k): v for k, v in item["w_norms"].items()},
            support={int(k): v for k, v in item["support"].items()},
        ))
    return records
