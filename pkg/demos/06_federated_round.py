"""
FedAvg across per-subject clients
=================================

Builds a 3-subject synthetic corpus, partitions it one-client-per-subject,
and runs a handful of federated rounds on the compact CNN. Each round:
broadcast -> local SGD on private windows -> sample-weighted average ->
evaluate on the server-held union test set.

Only parameter sets cross the client boundary; the raw windows never
leave the ClientState objects.
"""

import tempfile

import numpy as np

from fedspike.dataset import TaskSpec, ingest_directory, split_normalize
from fedspike.federated import (TrainConfig, fedavg_aggregate, local_train,
                                partition_by_subject, run_rounds,
                                server_test_set)
from fedspike.models import ModelArch, make_model
from fedspike.synthetic import write_subject_runs

tmp = tempfile.mkdtemp(prefix="fed_demo_")
subjects = ["S001", "S002", "S003"]
write_subject_runs(tmp, subjects, master_seed=5, n_channels=8)
task = TaskSpec(window_len=320)
examples = ingest_directory(tmp, subjects, task)
split = split_normalize(examples, ratio=0.8, seed=5)

clients = partition_by_subject(split)
test_w, test_y = server_test_set(split)
print(f"{len(clients)} clients:",
      {c.client_id: int(c.n_k) for c in clients},
      f" server test set {len(test_y)} examples")

arch = ModelArch(conv=((4, 3, 8), (8, 5, 4)), fc=(32,))
model = make_model("cnn", arch=arch, in_channels=8, window_len=320, gain=1.5)
init = model.init_params(seed=5)
# lr above the experiment default: the compact demo model tolerates it and
# the accuracy climb is visible within a few rounds
tc = TrainConfig(lr=0.1, batch=64, epochs=1)

# One round by hand, to see the moving parts...
updates = [local_train(c, init, model, tc) for c in clients]
merged = fedavg_aggregate(updates)
print("round 0 by hand: client losses",
      {u.client_id: round(u.train_loss, 3) for u in updates},
      " merged fingerprint", merged.fingerprint[:12])

# ...then the loop the experiment layer uses.
results, final = run_rounds(clients, model, init, test_w, test_y,
                            rounds=16, tc=tc)
print("\nround  test_loss  test_acc")
for r in results:
    print(f"{r.round_index:5d}  {r.test_loss:9.4f}  {r.test_accuracy:8.3f}")
print(f"\nfinal global accuracy {results[-1].test_accuracy:.3f} (chance 0.25)")
