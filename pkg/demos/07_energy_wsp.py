"""
Per-inference energy accounting and the combined score
======================================================

MAC-based layers cost e_mac per multiply-accumulate; spiking layers cost
e_ac per accumulate, gated by measured firing rates. The combined score
(WSP) weights normalized accuracy and normalized energy equally:

    wsp = 0.5 * acc / max(acc)  +  0.5 * min(energy) / energy

so the best score needs both competitive accuracy and low energy.
"""

import numpy as np

from fedspike.autodiff import Tape
from fedspike.encoding import EncoderConfig, encode_batch
from fedspike.energy import (EnergyModel, compute_wsp, count_ops,
                             estimate_energy, format_report)
from fedspike.models import make_model

rng = np.random.default_rng(0)
windows = rng.normal(size=(16, 64, 640))
em = EnergyModel()  # e_mac 4.6 pJ, e_ac 0.9 pJ
print(f"constants: e_mac={em.e_mac:.2e} J, e_ac={em.e_ac:.2e} J")

energies, ops = {}, {}
for kind in ("snn", "cnn", "lstm"):
    model = make_model(kind, in_channels=64, window_len=640)
    params = model.init_params(seed=0)
    tape = Tape()
    pn = tape.params_from(params)
    if kind == "snn":
        encoded = encode_batch(windows, EncoderConfig(scheme="direct", steps=8, seed=0))
        _, stats = model.forward(tape, pn, encoded)
    else:
        model.forward(tape, pn, windows)
        stats = None
    counts = count_ops(model, stats)
    ops[kind] = counts
    energies[kind] = estimate_energy(counts, em)
    print(f"{kind:4s}  MACs {counts.macs:>12,.0f}   ACs {counts.acs:>12,.0f}"
          f"   -> {energies[kind] * 1e6:8.3f} uJ per inference")

# The spiking model converts its big fully-connected layer to sparse
# accumulates; the recurrent model pays 4 gates x 640 steps of MACs.

# ---------------------------------------------------------------------------
# WSP on illustrative accuracies (energy from the init-weight models above).
# ---------------------------------------------------------------------------
accs = {"snn": 0.85, "cnn": 0.93, "lstm": 0.88}
report = compute_wsp([(k, accs[k], energies[k]) for k in ("snn", "cnn", "lstm")])
rows = [dict(method=k, accuracy=accs[k], energy=energies[k],
             macs=ops[k].macs, acs=ops[k].acs) for k in ("snn", "cnn", "lstm")]
print()
print(format_report(rows, report, em))
