"""Federated orchestration: shard, train locally, average by sample count.

Every client trains on its own shard each round; the server replaces the
global model with the sample-count-weighted mean of the client results.
Weighting, summation order, and per-client random streams are all pinned
so that runs are reproducible bit for bit, a single-client federation
replays centralized training exactly, and the in-process engine here is
the oracle for the wire protocol.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .corpus import Manifest
from .data import Dataset
from .errors import (EmptyShard, EmptyUpdateSet, RoundMismatch, ShapeMismatch,
                     TooFewSamples)
from .metrics import EvalReport, confusion, history_row, precision_recall_f1, with_history
from .nn import ModelParams, TrainConfig, accuracy, fit, init_params, predict

_MIX_CLIENT = 0x9E3779B97F4A7C15
_MIX_ROUND = 0xC2B2AE3D27D4EB4F
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class FedConfig:
    n_clients: int = 3
    n_rounds: int = 30
    local_epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.006
    seed: int = 0
    label_skew: float = 0.0  # 0 = IID; >0 biases shard class mix

    def __post_init__(self) -> None:
        if self.n_clients < 1 or self.n_rounds < 1 or self.local_epochs < 1:
            raise ValueError("n_clients, n_rounds, and local_epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 <= self.label_skew <= 1.0:
            raise ValueError("label_skew must lie in [0, 1]")


@dataclass(frozen=True)
class ClientShard:
    client_id: str
    samples: Dataset

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    round_index: int
    params: ModelParams
    n_samples: int


def client_ordinal(client_id: str) -> int:
    """Stable integer identity for a client, used to derive its rng stream.

    Ids shaped like "client-3" map to their trailing integer; anything else
    falls back to a crc of the full id.
    """
    digits = ""
    for ch in reversed(client_id):
        if ch.isdigit():
            digits = ch + digits
        else:
            break
    if digits:
        return int(digits)
    return zlib.crc32(client_id.encode("utf-8"))


def client_stream_seed(seed: int, client_index: int, round_index: int) -> int:
    """Per-(client, round) seed; client 0 at round 0 reduces to the base seed,
    so a one-client federation replays centralized training bit for bit."""
    mix = (client_index * _MIX_CLIENT + round_index * _MIX_ROUND) & _MASK64
    return (seed ^ mix) & _MASK64


def partition_indices(n: int, n_clients: int, seed: int, labels=None,
                      label_skew: float = 0.0) -> list[np.ndarray]:
    """Shuffle 0..n-1, cut into near-equal contiguous blocks, sort each block.

    Sorting each shard back into dataset order makes membership the only
    thing the shuffle decides. With label_skew > 0 a matching fraction of
    the shuffled indices is stably label-sorted first, which skews the
    class mix per shard while keeping sizes, disjointness, and coverage.
    """
    if n < n_clients:
        raise TooFewSamples(f"{n} samples cannot cover {n_clients} clients")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    if label_skew > 0.0:
        if labels is None:
            raise ValueError("label_skew needs labels")
        m = int(round(label_skew * n))
        head = perm[:m]
        head = head[np.argsort(np.asarray(labels)[head], kind="stable")]
        perm = np.concatenate([head, perm[m:]])
    base, extra = divmod(n, n_clients)
    blocks = []
    start = 0
    for k in range(n_clients):
        size = base + (1 if k < extra else 0)
        blocks.append(np.sort(perm[start : start + size]))
        start += size
    return blocks


def partition(dataset: Dataset, n_clients: int, seed: int,
              label_skew: float = 0.0) -> list[ClientShard]:
    """IID shuffle and near-equal split of the dataset across clients."""
    blocks = partition_indices(len(dataset), n_clients, seed,
                               labels=dataset.labels, label_skew=label_skew)
    return [ClientShard(f"client-{k}", dataset.subset(block))
            for k, block in enumerate(blocks)]


def partition_manifest(manifest: Manifest, n_clients: int, seed: int) -> list[Manifest]:
    """The same split as partition(), applied to manifest entries.

    Loading shard manifest k at a given side yields exactly the dataset
    rows partition() would hand client k.
    """
    blocks = partition_indices(len(manifest), n_clients, seed,
                               labels=manifest.labels())
    return [manifest.subset(block.tolist()) for block in blocks]


def local_train(global_params: ModelParams, shard: ClientShard,
                config: TrainConfig, round_index: int = 0) -> ClientUpdate:
    """One client's round: copy the global model, fit on the shard only."""
    if len(shard) == 0:
        raise EmptyShard(f"client {shard.client_id} has no samples")
    rng = np.random.default_rng(
        client_stream_seed(config.seed, client_ordinal(shard.client_id), round_index))
    params, _ = fit(global_params, shard.samples, config, rng)
    return ClientUpdate(client_id=shard.client_id, round_index=round_index,
                        params=params, n_samples=len(shard))


def aggregate(updates: Sequence[ClientUpdate]) -> ModelParams:
    """Sample-count-weighted mean of the client parameters.

    Updates are summed in sorted client_id order and accumulated in double
    precision before casting back, so the result is order independent and
    identical inputs aggregate to themselves exactly.
    """
    if not updates:
        raise EmptyUpdateSet("no client updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    rounds = {u.round_index for u in ordered}
    if len(rounds) != 1:
        raise RoundMismatch(f"updates span rounds {sorted(rounds)}")
    names = ordered[0].params.named()
    for u in ordered[1:]:
        for name, arr in u.params.named().items():
            if arr.shape != names[name].shape:
                raise ShapeMismatch(f"update {u.client_id} has {name} of shape {arr.shape}")
    total = sum(u.n_samples for u in ordered)
    merged = {}
    for name in names:
        acc = np.zeros(names[name].shape, dtype=np.float64)
        for u in ordered:
            acc += u.params.named()[name].astype(np.float64) * (u.n_samples / total)
        merged[name] = acc.astype(names[name].dtype)
    return ModelParams(**merged)


def evaluate_model(params: ModelParams, dataset: Dataset,
                   threshold: float = 0.5) -> EvalReport:
    """Confusion matrix and derived metrics of the model on a dataset."""
    labels, _ = predict(params, dataset.images, threshold)
    return precision_recall_f1(confusion(labels, dataset.labels))


def run_federation(dataset: Dataset, fed_config: FedConfig,
                   train_config: TrainConfig,
                   val_set: Optional[Dataset] = None,
                   ) -> tuple[ModelParams, list[EvalReport]]:
    """Broadcast, train locally on every client, aggregate; one report per round.

    The global model is seeded from train_config.seed; the shard layout from
    fed_config.seed. Reports are computed on val_set when given, otherwise
    on the training data itself.
    """
    local_cfg = replace(train_config, epochs=fed_config.local_epochs,
                        batch_size=fed_config.batch_size,
                        learning_rate=fed_config.learning_rate)
    shards = partition(dataset, fed_config.n_clients, fed_config.seed,
                       fed_config.label_skew)
    global_params = init_params(train_config.side, train_config.seed)
    reports: list[EvalReport] = []
    for round_index in range(fed_config.n_rounds):
        updates = [local_train(global_params, shard, local_cfg, round_index)
                   for shard in shards]
        global_params = aggregate(updates)
        reports.append(round_report(global_params, round_index, dataset, val_set))
    return global_params, reports


def round_report(params: ModelParams, round_index: int, train_set: Dataset,
                 val_set: Optional[Dataset]) -> EvalReport:
    train_acc = accuracy(params, train_set)
    if val_set is not None and len(val_set):
        report = evaluate_model(params, val_set)
        val_acc = report.accuracy
    else:
        report = evaluate_model(params, train_set)
        val_acc = None
    return with_history(report, [history_row(round_index, train_acc, val_acc)])
