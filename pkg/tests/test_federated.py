"""FedAvg algebra, local training, and round orchestration."""

import dataclasses

import numpy as np
import pytest

from fedspike.autodiff import ParameterSet, sgd_step, substream
from fedspike.dataset import LabeledExample, split_normalize
from fedspike.encoding import EncoderConfig
from fedspike.federated import (
    ClientState,
    ClientUpdate,
    FederatedError,
    RoundResult,
    TrainConfig,
    fedavg_aggregate,
    local_train,
    model_layout,
    partition_by_subject,
    run_rounds,
    server_test_set,
)
from fedspike.models import CnnModel, LifConfig, ModelArch, SnnModel, loss_and_grads

TINY_ARCH = ModelArch(conv=((2, 3, 2),), fc=(4,))


def tiny_cnn():
    return CnnModel(TINY_ARCH, in_channels=2, window_len=9)


def make_split(counts, n_ch=2, length=9, seed=3):
    """counts: {subject: per-class count}; returns a normalized DatasetSplit."""
    rng = np.random.default_rng(1)
    exs = []
    for subject, per_class in counts.items():
        for k in range(4):
            for _ in range(per_class):
                exs.append(LabeledExample(rng.normal(size=(n_ch, length)), k, subject))
    return split_normalize(exs, ratio=0.8, seed=seed)


def update(cid, arrays, n_k, loss=0.0):
    return ClientUpdate(client_id=cid, params=ParameterSet(arrays), n_k=n_k,
                        train_loss=loss)


class TestPartition:
    def test_single_subject_single_client(self):
        split = make_split({"S001": 5})
        clients = partition_by_subject(split)
        assert len(clients) == 1
        assert clients[0].client_id == "S001"
        assert clients[0].n_k == len(split.train)

    def test_client_sample_counts(self):
        split = make_split({"S001": 25, "S002": 20, "S003": 30})
        clients = partition_by_subject(split)
        # per class: 25 -> 20 train, 20 -> 16, 30 -> 24
        assert [c.n_k for c in clients] == [80, 64, 96]
        assert [c.client_id for c in clients] == ["S001", "S002", "S003"]

    def test_partition_exact_and_disjoint(self):
        split = make_split({"S001": 4, "S002": 6})
        clients = partition_by_subject(split)
        assert sum(c.n_k for c in clients) == len(split.train)
        for c in clients:
            rows = {tuple(w.ravel()[:4]) for w in c.windows}
            for other in clients:
                if other is not c:
                    other_rows = {tuple(w.ravel()[:4]) for w in other.windows}
                    assert not rows & other_rows

    def test_clients_hold_one_subject_each(self):
        split = make_split({"S001": 3, "S002": 3})
        for client in partition_by_subject(split):
            members = [e for e in split.train if e.subject_id == client.client_id]
            assert client.n_k == len(members)

    def test_server_test_set_is_union(self):
        split = make_split({"S001": 10, "S002": 10})
        windows, labels = server_test_set(split)
        assert len(labels) == len(split.test)
        assert windows.shape[0] == len(split.test)


class TestAggregate:
    def test_weighted_mean_hand_example(self):
        # (1*2.0 + 3*4.0) / 4 = 3.5
        agg = fedavg_aggregate([update("a", [("w", np.array([2.0]))], 1),
                                update("b", [("w", np.array([4.0]))], 3)])
        assert agg["w"].tolist() == [3.5]

    def test_single_update_identity(self):
        p = ParameterSet([("w", np.random.default_rng(0).normal(size=(3, 2)))])
        agg = fedavg_aggregate([update("a", list(p.items()), 7)])
        assert agg == p
        assert agg["w"].tobytes() == p["w"].tobytes()

    def test_equal_weights_unweighted_mean(self):
        rng = np.random.default_rng(2)
        tensors = [rng.normal(size=(4, 3)) for _ in range(3)]
        agg = fedavg_aggregate([update(f"c{i}", [("w", t)], 5)
                                for i, t in enumerate(tensors)])
        ref = (tensors[0] / 3 + tensors[1] / 3 + tensors[2] / 3)
        assert np.abs(agg["w"] - ref).max() < 1e-12

    def test_sorted_by_client_id(self):
        ups = [update("b", [("w", np.array([4.0]))], 3),
               update("a", [("w", np.array([2.0]))], 1)]
        assert fedavg_aggregate(ups)["w"].tolist() == [3.5]
        assert fedavg_aggregate(list(reversed(ups)))["w"] == \
            fedavg_aggregate(ups)["w"]

    def test_empty_rejected(self):
        with pytest.raises(FederatedError, match="nothing to aggregate"):
            fedavg_aggregate([])

    def test_nonpositive_count_rejected(self):
        with pytest.raises(FederatedError, match="n_k"):
            fedavg_aggregate([update("a", [("w", np.zeros(2))], 0)])

    def test_layout_mismatch_rejected(self):
        with pytest.raises(FederatedError, match="layout"):
            fedavg_aggregate([update("a", [("w", np.zeros(2))], 1),
                              update("b", [("w", np.zeros(3))], 1)])


class TestLocalTrain:
    def test_zero_lr_returns_global_params(self):
        split = make_split({"S001": 4})
        (client,) = partition_by_subject(split)
        model = tiny_cnn()
        params = model.init_params(seed=0)
        up = local_train(client, params, model, TrainConfig(lr=0.0))
        assert up.params == params
        assert up.n_k == client.n_k

    def test_matches_centralized_sgd_bit_for_bit(self):
        split = make_split({"S001": 6})
        (client,) = partition_by_subject(split)
        model = tiny_cnn()
        params0 = model.init_params(seed=1)
        tc = TrainConfig(lr=0.05, batch=4)
        up = local_train(client, params0, model, tc, round_index=2)

        # Centralized oracle: identical shuffle stream, same batches.
        rng = substream(split.seed, "shuffle", "S001", 2)
        order = rng.permutation(client.n_k)
        params = params0
        for lo in range(0, client.n_k, tc.batch):
            idx = order[lo:lo + tc.batch]
            _, grads, _, _ = loss_and_grads(model, params, client.windows[idx],
                                            client.labels[idx])
            params = sgd_step(params, grads, tc.lr)
        assert up.params == params

    def test_descent_on_most_seeds(self):
        model = tiny_cnn()
        wins = 0
        for seed in range(20):
            split = make_split({"S001": 6}, seed=seed)
            (client,) = partition_by_subject(split)
            params = model.init_params(seed=seed)
            loss0, _, _, _ = loss_and_grads(model, params, client.windows,
                                            client.labels)
            up = local_train(client, params, model, TrainConfig(lr=0.05, batch=8))
            loss1, _, _, _ = loss_and_grads(model, up.params, client.windows,
                                            client.labels)
            wins += loss1 <= loss0
        assert wins >= 18

    def test_layout_mismatch_rejected(self):
        split = make_split({"S001": 4})
        (client,) = partition_by_subject(split)
        model = tiny_cnn()
        wrong = ParameterSet([("w", np.zeros(3))])
        with pytest.raises(FederatedError, match="layout"):
            local_train(client, wrong, model)

    def test_empty_client_rejected(self):
        client = ClientState("S009", np.zeros((0, 2, 9)), np.zeros(0, dtype=int))
        model = tiny_cnn()
        with pytest.raises(FederatedError, match="no local data"):
            local_train(client, model.init_params(0), model)

    def test_model_layout_helper(self):
        model = tiny_cnn()
        assert model_layout(model) == model.init_params(0).layout()
        snn = SnnModel(TINY_ARCH, LifConfig(), in_channels=2, window_len=9)
        assert model_layout(snn) == snn.init_params(0).layout()


class TestRunRounds:
    def setup_run(self, counts=None, seed=5):
        split = make_split(counts or {"S001": 5, "S002": 5}, seed=seed)
        clients = partition_by_subject(split)
        tw, tl = server_test_set(split)
        model = tiny_cnn()
        return clients, model, model.init_params(seed=seed), tw, tl

    def test_zero_lr_round_is_identity(self):
        clients, model, params0, tw, tl = self.setup_run()
        results, params = run_rounds(clients, model, params0, tw, tl, rounds=1,
                                     tc=TrainConfig(lr=0.0))
        assert params == params0
        from fedspike.models import evaluate
        _, acc0, _ = evaluate(model, params0, tw, tl)
        assert results[0].test_accuracy == acc0

    def test_same_seed_identical_sequences(self):
        a_results, a_params = run_rounds(*self._fresh(), rounds=3,
                                         tc=TrainConfig(lr=0.05, batch=8))
        b_results, b_params = run_rounds(*self._fresh(), rounds=3,
                                         tc=TrainConfig(lr=0.05, batch=8))
        assert a_params == b_params
        for ra, rb in zip(a_results, b_results):
            assert ra.round_index == rb.round_index
            assert ra.fingerprint == rb.fingerprint
            assert ra.client_losses == rb.client_losses
            assert ra.test_loss == rb.test_loss
            assert ra.test_accuracy == rb.test_accuracy

    def _fresh(self):
        clients, model, params0, tw, tl = self.setup_run(seed=7)
        return clients, model, params0, tw, tl

    def test_client_order_invariance(self):
        clients, model, params0, tw, tl = self.setup_run()
        fwd, pf = run_rounds(clients, model, params0, tw, tl, rounds=2,
                             tc=TrainConfig(lr=0.05, batch=8))
        rev, pr = run_rounds(list(reversed(clients)), model, params0, tw, tl,
                             rounds=2, tc=TrainConfig(lr=0.05, batch=8))
        assert pf == pr
        assert [r.fingerprint for r in fwd] == [r.fingerprint for r in rev]
        assert [r.test_accuracy for r in fwd] == [r.test_accuracy for r in rev]

    def test_single_client_round_equals_local_train(self):
        clients, model, params0, tw, tl = self.setup_run(counts={"S001": 5})
        tc = TrainConfig(lr=0.05, batch=8)
        _, params = run_rounds(clients, model, params0, tw, tl, rounds=1, tc=tc)
        up = local_train(clients[0], params0, model, tc, round_index=0)
        assert params == up.params

    def test_round_indices_and_callback(self):
        clients, model, params0, tw, tl = self.setup_run()
        seen = []
        results, _ = run_rounds(clients, model, params0, tw, tl, rounds=3,
                                tc=TrainConfig(lr=0.01, batch=8),
                                on_round=lambda res, ups: seen.append(
                                    (res.round_index, len(ups))))
        assert [r.round_index for r in results] == [0, 1, 2]
        assert seen == [(0, 2), (1, 2), (2, 2)]

    def test_bad_round_count(self):
        clients, model, params0, tw, tl = self.setup_run()
        with pytest.raises(FederatedError, match="round count"):
            run_rounds(clients, model, params0, tw, tl, rounds=0)

    def test_snn_round_runs(self):
        split = make_split({"S001": 5, "S002": 5})
        clients = partition_by_subject(split)
        tw, tl = server_test_set(split)
        model = SnnModel(TINY_ARCH, LifConfig(), in_channels=2, window_len=9)
        params0 = model.init_params(seed=0)
        enc = EncoderConfig(steps=3)
        results, params = run_rounds(clients, model, params0, tw, tl, rounds=2,
                                     tc=TrainConfig(lr=0.05, batch=8), encoder=enc)
        assert len(results) == 2
        assert params.fingerprint == params0.fingerprint


class TestPrivacyShape:
    def test_update_carries_only_parameters(self):
        field_types = {f.name: f.type for f in dataclasses.fields(ClientUpdate)}
        assert field_types == {"client_id": "str", "params": "ParameterSet",
                               "n_k": "int", "train_loss": "float"}

    def test_round_result_has_no_example_payload(self):
        names = {f.name for f in dataclasses.fields(RoundResult)}
        assert names == {"round_index", "fingerprint", "client_losses",
                         "test_loss", "test_accuracy", "duration_ms"}
