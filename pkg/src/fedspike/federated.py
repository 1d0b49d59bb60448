"""FedAvg simulation over per-subject clients.

Each subject's training partition lives inside one ClientState and never
leaves it: the only payload crossing the client/server boundary is a
ClientUpdate carrying a ParameterSet (plus counts and scalar loss). The
server holds the union of test partitions for evaluation only. Aggregation
is an n_k-weighted parameter mean summed in ascending client-id order, so
results are independent of scheduling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterSet, sgd_step, substream
from .dataset import DatasetSplit
from .encoding import EncoderConfig
from .models import evaluate, loss_and_grads


class FederatedError(Exception):
    """Aggregation or local-training precondition violated."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    batch: int = 64
    epochs: int = 1
    rate_penalty: float = 1.0   # spiking models only; 0 disables
    rate_target: float = 0.10

    def __post_init__(self):
        if self.lr < 0 or self.batch < 1 or self.epochs < 1:
            raise FederatedError(f"bad training config {self}")


@dataclass
class ClientState:
    """One subject's private shard plus its shuffle seed."""

    client_id: str
    windows: np.ndarray = field(repr=False)  # (n_k, C, L), this subject only
    labels: np.ndarray = field(repr=False)
    seed: int = 0

    @property
    def n_k(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class ClientUpdate:
    """The only object a client sends to the server."""

    client_id: str
    params: ParameterSet
    n_k: int
    train_loss: float


@dataclass(frozen=True)
class RoundResult:
    round_index: int
    fingerprint: str
    client_losses: dict
    test_loss: float
    test_accuracy: float
    duration_ms: float


def partition_by_subject(split: DatasetSplit):
    """One client per subject over the train partition, ascending id order."""
    by_subject = {}
    for ex in split.train:
        by_subject.setdefault(ex.subject_id, []).append(ex)
    if not by_subject:
        raise FederatedError("split has no training examples")
    clients = []
    for sid in sorted(by_subject):
        exs = by_subject[sid]
        clients.append(ClientState(
            client_id=sid,
            windows=np.stack([e.window for e in exs]),
            labels=np.array([e.label for e in exs], dtype=np.int64),
            seed=split.seed))
    return clients


def server_test_set(split: DatasetSplit):
    """Union of all subjects' test partitions, held at the server."""
    if not split.test:
        raise FederatedError("split has no test examples")
    windows = np.stack([e.window for e in split.test])
    labels = np.array([e.label for e in split.test], dtype=np.int64)
    return windows, labels


def local_train(client: ClientState, global_params: ParameterSet, model,
                tc: TrainConfig = TrainConfig(),
                encoder: EncoderConfig | None = None,
                round_index: int = 0) -> ClientUpdate:
    """Seeded-shuffled mini-batch SGD from the broadcast parameters.

    Returns the updated ParameterSet and this client's sample count; raw
    examples stay inside ClientState.
    """
    if client.n_k == 0:
        raise FederatedError(f"client {client.client_id} has no local data")
    if global_params.layout() != model_layout(model):
        raise FederatedError(
            f"client {client.client_id}: broadcast parameter layout does not "
            f"match the model")
    params = global_params
    rng = substream(client.seed, "shuffle", client.client_id, round_index)
    loss_sum, n_seen = 0.0, 0
    penalty = tc.rate_penalty if model.kind == "snn" else 0.0
    for _ in range(tc.epochs):
        order = rng.permutation(client.n_k)
        for lo in range(0, client.n_k, tc.batch):
            idx = order[lo:lo + tc.batch]
            loss, grads, _, _ = loss_and_grads(
                model, params, client.windows[idx], client.labels[idx],
                encoder, rate_penalty=penalty, rate_target=tc.rate_target)
            params = sgd_step(params, grads, tc.lr)
            loss_sum += loss * len(idx)
            n_seen += len(idx)
    return ClientUpdate(client_id=client.client_id, params=params,
                        n_k=client.n_k, train_loss=loss_sum / n_seen)


def model_layout(model):
    """Expected (name, shape) parameter layout for a model, cheaply."""
    if model.kind == "lstm":
        out = []
        size_in = model.in_channels
        H = model.hidden
        for l in range(model.layers):
            out += [(f"lstm{l}.wx", (size_in, 4 * H)), (f"lstm{l}.wh", (H, 4 * H)),
                    (f"lstm{l}.b", (4 * H,))]
            size_in = H
        return out + [("readout.w", (H, model.n_classes)),
                      ("readout.b", (model.n_classes,))]
    out = []
    for layer in model.plan:
        out += [(layer["name"] + ".w", layer["w_shape"]),
                (layer["name"] + ".b", layer["b_shape"])]
    return out


def fedavg_aggregate(updates) -> ParameterSet:
    """Elementwise weighted mean, weights n_k / sum(n_k), ascending id order."""
    updates = sorted(updates, key=lambda u: u.client_id)
    if not updates:
        raise FederatedError("nothing to aggregate")
    for u in updates:
        if u.n_k <= 0:
            raise FederatedError(f"client {u.client_id}: n_k must be > 0, got {u.n_k}")
        if u.params.fingerprint != updates[0].params.fingerprint:
            raise FederatedError(
                f"client {u.client_id}: parameter layout differs from "
                f"client {updates[0].client_id}")
    if len(updates) == 1:
        return updates[0].params
    total = sum(u.n_k for u in updates)
    weights = [u.n_k / total for u in updates]
    assert abs(sum(weights) - 1.0) <= 1e-12
    names = updates[0].params.names()
    acc = {name: weights[0] * updates[0].params[name] for name in names}
    for w, u in zip(weights[1:], updates[1:]):
        for name in names:
            acc[name] = acc[name] + w * u.params[name]
    return ParameterSet([(name, acc[name]) for name in names])


def run_rounds(clients, model, init_params: ParameterSet,
               test_windows, test_labels, rounds: int,
               tc: TrainConfig = TrainConfig(),
               encoder: EncoderConfig | None = None,
               on_round=None):
    """Broadcast -> local train -> aggregate -> evaluate, `rounds` times.

    Returns (list of RoundResult, final global ParameterSet). Fully
    deterministic given the clients' seeds; on_round(result, updates) is
    called after each round for logging.
    """
    if rounds < 1:
        raise FederatedError(f"round count must be >= 1, got {rounds}")
    params = init_params
    results = []
    for r in range(rounds):
        t0 = time.perf_counter()
        updates = [local_train(c, params, model, tc, encoder, round_index=r)
                   for c in clients]
        params = fedavg_aggregate(updates)
        test_loss, test_acc, _ = evaluate(model, params, test_windows,
                                          test_labels, encoder)
        result = RoundResult(
            round_index=r, fingerprint=params.fingerprint,
            client_losses={u.client_id: u.train_loss for u in updates},
            test_loss=test_loss, test_accuracy=test_acc,
            duration_ms=(time.perf_counter() - t0) * 1e3)
        results.append(result)
        if on_round is not None:
            on_round(result, updates)
    return results, params
