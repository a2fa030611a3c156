"""Probe/gallery scoring, mirrored-score and multi-model fusion, CMC
curves, and repeated-split aggregation.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dataio, network, pairwise
from .errors import DimensionError, ProtocolError, UsageError


@dataclass
class ScoreTable:
    scores: np.ndarray  # [n_probe, n_gallery]
    probe_ids: list
    gallery_ids: list

    def __post_init__(self):
        if self.scores.shape != (len(self.probe_ids), len(self.gallery_ids)):
            raise DimensionError(
                f"score matrix {self.scores.shape} vs id lists "
                f"{(len(self.probe_ids), len(self.gallery_ids))}")
        if not np.isfinite(self.scores).all():
            raise DimensionError("score table contains non-finite entries")


@dataclass
class CmcCurve:
    """rates[k-1] = fraction of probes whose true match ranks <= k."""

    rates: np.ndarray
    split_rates: list = field(default_factory=list)  # per-split curves when aggregated

    def rate(self, k: int) -> float:
        return float(self.rates[k - 1])


def extract_features(params: network.NetworkParams, images: list, branch: str,
                     batch: int = 64, threads: int = 1) -> np.ndarray:
    """Feature rows [N, d] for a list of PersonImages."""
    chunks = [images[i:i + batch] for i in range(0, len(images), batch)]

    def run(chunk):
        parts = dataio.part_batch(chunk, params.config)
        feats, _ = network.forward_batch(params, parts, branch)
        return feats

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(run, chunks))
    else:
        outs = [run(c) for c in chunks]
    return np.concatenate(outs, axis=0)


def score_set(params_list: list, probe_set: list, gallery_set: list,
              use_mirror_fusion: bool = True, threads: int = 1) -> ScoreTable:
    """Cosine score of every probe against every gallery image.

    Mirror fusion sums the four original/mirrored combinations; several
    models sum their tables (the multi-dataset fusion rule).
    """
    if not params_list:
        raise UsageError("need at least one model")
    if not gallery_set:
        raise UsageError("gallery set is empty")
    if not probe_set:
        raise UsageError("probe set is empty")
    dims = {p.config.feature_dim for p in params_list}
    if len(dims) != 1:
        raise UsageError(f"models disagree on feature dimension: {sorted(dims)}")
    probe_views = [probe_set]
    gallery_views = [gallery_set]
    if use_mirror_fusion:
        probe_views.append([dataio.mirror(im) for im in probe_set])
        gallery_views.append([dataio.mirror(im) for im in gallery_set])
    total = np.zeros((len(probe_set), len(gallery_set)))
    for params in params_list:
        pfeats = [extract_features(params, pv, "a", threads=threads).T
                  for pv in probe_views]
        gfeats = [extract_features(params, gv, "b", threads=threads).T
                  for gv in gallery_views]
        for X in pfeats:
            for Y in gfeats:
                total += pairwise.cosine_similarity(X, Y)
    return ScoreTable(total, [im.subject_id for im in probe_set],
                      [im.subject_id for im in gallery_set])


def cmc(table: ScoreTable) -> CmcCurve:
    """Rank the true match of each probe; ties rank it pessimistically last."""
    gallery = np.asarray(table.gallery_ids)
    n_g = len(gallery)
    ranks = np.empty(len(table.probe_ids), dtype=np.intp)
    for i, pid in enumerate(table.probe_ids):
        hits = np.flatnonzero(gallery == pid)
        if hits.size == 0:
            raise ProtocolError(f"probe subject {pid!r} absent from gallery")
        t = hits[0]
        row = table.scores[i]
        higher = int((row > row[t]).sum())
        tied = int((row == row[t]).sum()) - 1
        ranks[i] = 1 + higher + tied
    rates = np.array([(ranks <= k).mean() for k in range(1, n_g + 1)])
    return CmcCurve(rates)


def aggregate_splits(curves: list) -> CmcCurve:
    """Arithmetic mean per rank across repeated splits."""
    if not curves:
        raise UsageError("no curves to aggregate")
    sizes = {len(c.rates) for c in curves}
    if len(sizes) != 1:
        raise DimensionError(f"curves have mismatched rank domains: {sorted(sizes)}")
    mean = np.mean([c.rates for c in curves], axis=0)
    return CmcCurve(mean, split_rates=[c.rates.copy() for c in curves])


def write_cmc_csv(path, curve: CmcCurve) -> None:
    """CSV `rank,rate_mean,rate_split_1,...` with one row per rank."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["rank", "rate_mean"] + [f"rate_split_{i + 1}"
                                          for i in range(len(curve.split_rates))]
        writer.writerow(header)
        for k in range(len(curve.rates)):
            row = [k + 1, f"{curve.rates[k]:.10g}"]
            row += [f"{sr[k]:.10g}" for sr in curve.split_rates]
            writer.writerow(row)


def write_score_csv(path, table: ScoreTable) -> None:
    """Dump a score table for audit: probe rows, gallery columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probe_id"] + list(table.gallery_ids))
        for pid, row in zip(table.probe_ids, table.scores):
            writer.writerow([pid] + [f"{v:.10g}" for v in row])
