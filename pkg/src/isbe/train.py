"""Training loop with both loss branches, timing split, and metrics.

Per batch exactly one of two branches runs:

* cross-entropy: record the fused loss on the tape, backward from it;
* error injection: normalize the raw scores outside the tape, seed backward
  at the raw-score node with normalized-minus-target.

The timing split counts network forward plus loss/normalization forward as
inference, and seed construction plus backward as backpropagation; the
optimizer step is outside both.
"""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .autograd import Tape
from .errors import DomainError, MeasurementError, NumericError
from .loss import REDUCTIONS, ce_softmax, cross_entropy_integrated
from .nn import ARCHITECTURES, Network, forward, save_checkpoint
from .normalize import (Normalization, isbe_backward_seed, isbe_monitor_loss,
                        normalize)
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)

LOSS_OPTIONS = ("ce-none", "ce-mean", "ce-sum",
                "isbe-softmax", "isbe-sigmoid", "isbe-tanh",
                "isbe-hardsigmoid", "isbe-hardtanh", "isbe-pnorm")

CSV_HEADER = ["epoch", "train_loss", "progressive_loss", "val_loss",
              "test_acc", "inf_s", "bwd_s", "tau"]


def parse_loss(option: str, pnorm_p: float = 2.0):
    """'ce-<reduction>' -> ('ce', reduction); 'isbe-<norm>' -> ('isbe', Normalization)."""
    if option not in LOSS_OPTIONS:
        raise ValueError(f"loss must be one of {LOSS_OPTIONS}, got {option!r}")
    family, _, variant = option.partition("-")
    if family == "ce":
        assert variant in REDUCTIONS
        return "ce", variant
    return "isbe", Normalization(variant, p=pnorm_p)


@dataclass
class RunConfig:
    arch: str = "n0"
    loss: str = "ce-mean"
    epochs: int = 5
    batch_size: int = 100
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    deterministic: bool = True
    mu: float = 1e-6
    augment: bool = False
    pnorm_p: float = 2.0
    dtype: type = np.float32

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"arch must be one of {tuple(ARCHITECTURES)}")
        parse_loss(self.loss)


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    progressive_loss: float
    val_loss: float
    test_acc: float
    inf_s: float
    bwd_s: float
    tau: float


@dataclass
class RunRecord:
    config: RunConfig
    rows: list = field(default_factory=list)
    skipped_batches: int = 0

    def write_csv(self, path):
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for r in self.rows:
                writer.writerow([r.epoch, f"{r.train_loss:.6f}",
                                 f"{r.progressive_loss:.6f}", f"{r.val_loss:.6f}",
                                 f"{r.test_acc:.2f}", f"{r.inf_s:.4f}",
                                 f"{r.bwd_s:.4f}", f"{r.tau:.4f}"])


def measure_tau(inference_s: float, backprop_s: float) -> float:
    """Backpropagation share of inference-plus-backpropagation time, in %."""
    total = inference_s + backprop_s
    if total <= 0:
        raise MeasurementError("zero total time")
    return backprop_s / total * 100.0


def measure_alpha(net: Network, test: data_mod.Dataset, batch_size: int = 500) -> float:
    """Test-set accuracy percentage (argmax of raw scores vs labels)."""
    if len(test) == 0:
        raise ValueError("empty test set")
    correct = 0
    for start in range(0, len(test), batch_size):
        x = Tensor(test.images[start:start + batch_size].astype(net.dtype))
        tape = Tape()
        out = tape.value(forward(net, x, training=False, tape=tape)).data
        correct += int((out.argmax(axis=1) ==
                        test.labels[start:start + batch_size]).sum())
    return correct / len(test) * 100.0


def _target_encoder(family, variant, cfg):
    if family == "ce":
        return lambda labels: data_mod.encode_for_normalization(
            labels, "softmax", cfg.mu)
    return lambda labels: data_mod.encode_for_normalization(
        labels, variant.kind, cfg.mu, p=cfg.pnorm_p)


def _eval_loss(net, ds, family, variant, cfg, batch_size, encode) -> float:
    """Epoch-end loss on a dataset in eval mode (monitoring only)."""
    total, count, nbatches = 0.0, 0, 0
    for start in range(0, len(ds), batch_size):
        labels = ds.labels[start:start + batch_size]
        x = Tensor(ds.images[start:start + batch_size].astype(net.dtype))
        targets = encode(labels)
        tape = Tape()
        out_id = forward(net, x, training=False, tape=tape)
        out = Tensor(tape.value(out_id).data.astype(np.float64))
        if family == "ce":
            red = "mean" if variant == "none" else variant
            z = cross_entropy_integrated(out, targets, red).item()
            # sum keeps its larger per-batch range; the others are per-example
            total += z if variant == "sum" else z * len(labels)
        else:
            try:
                y = normalize(out, variant)
            except DomainError:
                continue
            total += isbe_monitor_loss(y, targets) * len(labels)
        count += len(labels)
        nbatches += 1
    if family == "ce" and variant == "sum":
        return total / max(nbatches, 1)
    return total / max(count, 1)


def _check_finite(value: float, grads: dict, epoch: int, batch_idx: int):
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss at epoch {epoch} batch {batch_idx}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(
                f"non-finite gradient for {name} at epoch {epoch} batch {batch_idx}")


def train_run(cfg: RunConfig, train: data_mod.Dataset, val: data_mod.Dataset,
              test: data_mod.Dataset, checkpoint_path=None):
    """Run the full loop; returns (RunRecord, trained Network)."""
    family, variant = parse_loss(cfg.loss, cfg.pnorm_p)
    net = ARCHITECTURES[cfg.arch](cfg.seed, cfg.dtype)
    net.reseed_dropout(cfg.seed)
    net.resolve(train.images.shape[1:])
    optimizer = Adam(net.params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    encode = _target_encoder(family, variant, cfg)
    record = RunRecord(cfg)
    aug_rng = np.random.default_rng(cfg.seed ^ 0xA06)
    inf_s = bwd_s = 0.0

    for epoch in range(1, cfg.epochs + 1):
        running, nbatches = 0.0, 0
        for batch_idx, (images, labels) in enumerate(
                data_mod.batches(train, cfg.batch_size, cfg.seed + 9973 * epoch)):
            xdata = images.data
            if cfg.augment:
                xdata = data_mod.augment(xdata, aug_rng)
            x = Tensor(xdata.astype(net.dtype))
            targets = Tensor(encode(labels).data.astype(net.dtype))

            t0 = time.perf_counter()
            tape = Tape()
            out_id = forward(net, x, training=True, tape=tape)
            if family == "ce":
                loss_id = ce_softmax(tape, out_id, targets, variant)
                t1 = time.perf_counter()
                seed = Tensor(np.ones(tape.value(loss_id).shape, dtype=net.dtype))
                tape.backward(loss_id, seed)
                t2 = time.perf_counter()
                zval = tape.value(loss_id).data
                batch_loss = float((zval.mean() if variant == "none"
                                    else zval.reshape(())).item())
            else:
                try:
                    y = normalize(tape.value(out_id), variant)
                except DomainError:
                    # documented pnorm instability: skip the batch, keep going
                    log.warning("zero-norm raw-score row at epoch %d batch %d; "
                                "batch skipped", epoch, batch_idx)
                    record.skipped_batches += 1
                    continue
                t1 = time.perf_counter()
                seed = isbe_backward_seed(y, targets)
                tape.backward(out_id, seed)
                t2 = time.perf_counter()
                batch_loss = isbe_monitor_loss(y, targets)
            inf_s += t1 - t0
            bwd_s += t2 - t1

            grads = {name: tape.grad(nid).data
                     for name, nid in net.last_param_nodes.items()}
            _check_finite(batch_loss, grads, epoch, batch_idx)
            optimizer.step(grads)
            running += batch_loss
            nbatches += 1

        progressive = running / max(nbatches, 1)
        train_loss = _eval_loss(net, train, family, variant, cfg, 500, encode)
        val_loss = _eval_loss(net, val, family, variant, cfg, 500, encode) \
            if len(val) else float("nan")
        alpha = measure_alpha(net, test)
        # every batch skipped leaves no timings to share out
        tau = measure_tau(inf_s, bwd_s) if inf_s + bwd_s > 0 else float("nan")
        record.rows.append(EpochRow(epoch, train_loss, progressive, val_loss,
                                    alpha, inf_s, bwd_s, tau))
        log.info("epoch %d: loss %.4f, val %.4f, alpha %.2f%%, tau %.2f%%",
                 epoch, train_loss, val_loss, alpha, record.rows[-1].tau)

    if checkpoint_path:
        save_checkpoint(net, checkpoint_path)
    return record, net
