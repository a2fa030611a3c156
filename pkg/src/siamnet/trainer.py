"""Mini-batch SGD over the siamese network with the matrix-form cost.

General mode forwards every batch sample once through the shared
network; the pairwise gradient already accounts for each sample
appearing on both sides of a pair.  View-specific mode routes the two
camera views through their own parameter sets and uses the two-view
gradients.  Cross-batch pairs are never generated; the asymmetric
negative cost compensates.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import dataio, network, pairwise
from .errors import (
    DegenerateBatchError,
    NumericalError,
    UnusableDatasetError,
    UsageError,
)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 2.0
    beta: float = 0.5
    negative_cost: float = 2.0
    batch_size: int = 128
    epochs: int = 180
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    cost_kind: str = "deviance"  # deviance | fisher
    mode: str = "general"  # general | view_specific

    def __post_init__(self):
        if self.batch_size < 2:
            raise UsageError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.cost_kind not in ("deviance", "fisher"):
            raise UsageError(f"unknown cost_kind {self.cost_kind!r}")
        if self.mode not in network.MODES:
            raise UsageError(f"unknown mode {self.mode!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_cost: float
    dev_cost: float | None
    seconds: float


def _batch_ok(labels, cameras, mode) -> bool:
    """A usable batch has at least one positive and one negative pair."""
    if mode == "general":
        if len(labels) < 2:
            return False
        uniq = len(set(labels))
        return uniq >= 2 and uniq < len(labels)
    # view_specific: pairs form across the two camera groups only
    la = [l for l, cam in zip(labels, cameras) if cam == 0]
    lb = [l for l, cam in zip(labels, cameras) if cam == 1]
    if not la or not lb:
        return False
    pos = any(l in lb for l in la)
    neg = any(l != m for l in la for m in lb)
    return pos and neg


def make_batches(samples, batch_size: int, seed: int, epoch: int,
                 mode: str = "general"):
    """Deterministic shuffled batches of sample indices.

    samples: sequence of (label, camera) pairs.  Batches that cannot
    form both a positive and a negative pair are repaired by swapping
    one sample with another batch; a remainder of one sample folds into
    the previous batch.
    """
    labels = [s[0] for s in samples]
    cameras = [s[1] for s in samples]
    if len(set(labels)) < 2:
        raise UnusableDatasetError(f"dataset has {len(set(labels))} subject(s); need >= 2")
    rng = np.random.default_rng((seed, epoch))
    order = list(rng.permutation(len(samples)))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # a trailing batch below 3 samples can never hold both pair kinds
    if len(batches) > 1 and len(batches[-1]) < 3:
        batches[-2].extend(batches.pop())

    def ok(batch):
        return _batch_ok([labels[i] for i in batch], [cameras[i] for i in batch], mode)

    for bi, batch in enumerate(batches):
        if ok(batch):
            continue
        repaired = False
        for step in range(1, len(batches)):
            other = batches[(bi + step) % len(batches)]
            for oi in range(len(other)):
                for si in range(len(batch)):
                    batch[si], other[oi] = other[oi], batch[si]
                    if ok(batch) and ok(other):
                        repaired = True
                        break
                    batch[si], other[oi] = other[oi], batch[si]
                if repaired:
                    break
            if repaired:
                break
        if not repaired and not ok(batch):
            raise DegenerateBatchError(
                f"batch {bi} cannot be repaired to hold a positive and a negative pair")
    return batches


def sgd_step(params: list, grads: list, learning_rate: float, momentum: float,
             weight_decay: float, velocity: list):
    """In-place SGD with momentum and decoupled-from-nothing weight decay.

    v <- momentum*v - lr*(g + weight_decay*p);  p <- p + v.
    """
    for p, g, v in zip(params, grads, velocity):
        if not np.isfinite(g).all():
            raise NumericalError("non-finite gradient in sgd_step")
        v *= momentum
        v -= learning_rate * (g + weight_decay * p)
        p += v
    return params, velocity


class _CameraCoder:
    """Map camera ids onto {0, 1} in sorted order."""

    def __init__(self, images):
        cams = sorted({im.camera_id for im in images})
        self.code = {c: min(i, 1) for i, c in enumerate(cams)}

    def __call__(self, im):
        return self.code[im.camera_id]


def _cost_and_grad(config: TrainConfig, feats: np.ndarray, labels, cameras):
    """Pairwise cost and per-sample feature gradients [N, d] for one batch."""
    if config.mode == "general":
        X = feats.T
        masks = pairwise.build_masks(labels, config.negative_cost)
        S = pairwise.cosine_similarity(X)
        if config.cost_kind == "deviance":
            cost = pairwise.deviance_cost(S, masks, config.alpha, config.beta)
            gX = pairwise.deviance_grad_general(X, S, masks, config.alpha, config.beta)
        else:
            cost = pairwise.fisher_cost(S, masks)
            gX = pairwise.fisher_grad(X, S, masks)
        return cost, gX.T, None

    ia = [i for i, cam in enumerate(cameras) if cam == 0]
    ib = [i for i, cam in enumerate(cameras) if cam == 1]
    X = feats[ia].T
    Y = feats[ib].T
    masks = pairwise.build_masks([labels[i] for i in ia], config.negative_cost,
                                 labels_y=[labels[i] for i in ib])
    S = pairwise.cosine_similarity(X, Y)
    if config.cost_kind == "deviance":
        cost = pairwise.deviance_cost(S, masks, config.alpha, config.beta)
        gX, gY = pairwise.deviance_grad_specific(X, Y, S, masks, config.alpha, config.beta)
    else:
        raise UsageError("fisher cost is only wired for general mode")
    gfeats = np.zeros_like(feats)
    gfeats[ia] = gX.T
    gfeats[ib] = gY.T
    return cost, gfeats, (ia, ib)


def _epoch_cost(config, params, parts, labels, cameras):
    """Mean batch cost without updating parameters (held-out tracking)."""
    samples = list(zip(labels, cameras))
    batches = make_batches(samples, config.batch_size, config.seed, 0, config.mode)
    costs = []
    for batch in batches:
        if config.mode == "general":
            feats, _ = network.forward_batch(params, parts[batch], "a")
        else:
            feats = _two_view_forward(params, parts, batch, cameras)
        cost, _, _ = _cost_and_grad(config, feats,
                                    [labels[i] for i in batch],
                                    [cameras[i] for i in batch])
        costs.append(cost)
    return float(np.mean(costs))


def _two_view_forward(params, parts, batch, cameras):
    feats = np.zeros((len(batch), params.config.feature_dim))
    ia = [k for k, i in enumerate(batch) if cameras[i] == 0]
    ib = [k for k, i in enumerate(batch) if cameras[i] == 1]
    if ia:
        fa, _ = network.forward_batch(params, parts[[batch[k] for k in ia]], "a")
        feats[ia] = fa
    if ib:
        fb, _ = network.forward_batch(params, parts[[batch[k] for k in ib]], "b")
        feats[ib] = fb
    return feats


def train(config: TrainConfig, train_set: list, dev_set: list | None = None,
          net_config: network.NetConfig | None = None, log=None):
    """Train a network on preprocessed PersonImages.

    Returns (NetworkParams, [EpochRecord]).  Aborts with diagnostics on
    a non-finite cost.
    """
    params = network.init_network(config.mode, config.seed, net_config)
    coder = _CameraCoder(train_set + (dev_set or []))
    parts = dataio.part_batch(train_set, params.config)
    labels = [im.subject_id for im in train_set]
    cameras = [coder(im) for im in train_set]
    dev = None
    if dev_set:
        dev = (dataio.part_batch(dev_set, params.config),
               [im.subject_id for im in dev_set],
               [coder(im) for im in dev_set])

    tensors = params.tensors()
    velocity = [np.zeros_like(t) for t in tensors]
    samples = list(zip(labels, cameras))
    records = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        batches = make_batches(samples, config.batch_size, config.seed, epoch, config.mode)
        costs = []
        for bi, batch in enumerate(batches):
            blabels = [labels[i] for i in batch]
            bcams = [cameras[i] for i in batch]
            if config.mode == "general":
                feats, cache = network.forward_batch(params, parts[batch], "a")
                cost, gfeats, _ = _cost_and_grad(config, feats, blabels, bcams)
                grads = network.backward_batch(params, cache, gfeats, "a").tensors()
            else:
                ia = [k for k, i in enumerate(batch) if bcams[k] == 0]
                ib = [k for k, i in enumerate(batch) if bcams[k] == 1]
                fa, ca = network.forward_batch(params, parts[[batch[k] for k in ia]], "a")
                fb, cb = network.forward_batch(params, parts[[batch[k] for k in ib]], "b")
                feats = np.zeros((len(batch), params.config.feature_dim))
                feats[ia] = fa
                feats[ib] = fb
                cost, gfeats, _ = _cost_and_grad(config, feats, blabels, bcams)
                ga = network.backward_batch(params, ca, gfeats[ia], "a")
                gb = network.backward_batch(params, cb, gfeats[ib], "b")
                grads = ga.tensors() + gb.tensors()
            if not np.isfinite(cost):
                norms = [float(np.linalg.norm(t)) for t in tensors]
                raise NumericalError(
                    f"non-finite cost at epoch {epoch} batch {bi}; parameter norms {norms}")
            costs.append(cost)
            sgd_step(tensors, grads, config.learning_rate, config.momentum,
                     config.weight_decay, velocity)
        dev_cost = None
        if dev is not None:
            dev_cost = _epoch_cost(config, params, *dev)
        rec = EpochRecord(epoch, float(np.mean(costs)), dev_cost,
                          time.perf_counter() - t0)
        records.append(rec)
        if log:
            log(rec)
    return params, records


def write_epoch_csv(path, records) -> None:
    """One CSV row per epoch: epoch, train_cost, dev_cost, seconds."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_cost", "dev_cost", "seconds"])
        for r in records:
            dev = "" if r.dev_cost is None else f"{r.dev_cost:.10g}"
            writer.writerow([r.epoch, f"{r.train_cost:.10g}", dev, f"{r.seconds:.3f}"])
