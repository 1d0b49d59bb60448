"""Per-inference energy estimates, accuracy, and the combined WSP score.

Accounting model: dense/conv arithmetic on real-valued activations costs one
multiply-accumulate (MAC) per synapse per pass; spiking layers cost one
accumulate (AC) per synapse per time step per arriving spike, so their totals
scale with the measured firing rate. Default constants are the widely used
45 nm process estimates e_mac = 4.6 pJ, e_ac = 0.9 pJ.

WSP (weighted system performance) combines accuracy and energy with equal
weight: WSP_m = 0.5 * acc_m / max_acc + 0.5 * min_energy / energy_m. Both
terms self-normalize, so the score is invariant to rescaling all accuracies
or all energies; raw inputs are always emitted alongside scores so other
normalizations can be recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EnergyError(Exception):
    pass


@dataclass(frozen=True)
class EnergyModel:
    e_mac: float = 4.6e-12  # joules per multiply-accumulate
    e_ac: float = 0.9e-12   # joules per accumulate

    def __post_init__(self):
        if self.e_mac <= 0 or self.e_ac <= 0:
            raise EnergyError(f"energy constants must be > 0: {self}")
        if self.e_ac >= self.e_mac:
            raise EnergyError(
                f"e_ac ({self.e_ac}) must be < e_mac ({self.e_mac}); an "
                f"accumulate is the cheaper operation")


@dataclass
class OpCounts:
    """Per-layer operation counts for one inference."""

    layers: list  # dicts: name, macs, acs

    @property
    def macs(self) -> float:
        return float(sum(l["macs"] for l in self.layers))

    @property
    def acs(self) -> float:
        return float(sum(l["acs"] for l in self.layers))


def count_ops(model, stats=None) -> OpCounts:
    """Operation counts for one inference of the given model.

    For the spiking model, `stats` (SpikeStats from a representative forward
    pass) supplies measured firing rates: the first layer runs once at MAC
    cost on analog input (or at AC cost scaled by the input spike rate for
    binary encodings), each later spiking layer costs its synapse budget x T
    x its input layer's rate in ACs, and the readout is a single MAC-cost
    affine over time-averaged counts.
    """
    if model.kind == "snn":
        if stats is None:
            raise EnergyError("spiking energy accounting needs SpikeStats "
                              "(measured firing rates)")
        plan = model.plan
        spiking, readout = plan[:-1], plan[-1]
        T = stats.steps
        layers = []
        for li, layer in enumerate(spiking):
            if li == 0:
                if stats.input_rate is None:  # analog input current, one pass
                    layers.append(dict(name=layer["name"], macs=layer["macs"], acs=0.0))
                else:
                    layers.append(dict(name=layer["name"], macs=0.0,
                                       acs=layer["macs"] * T * stats.input_rate))
            else:
                in_rate = stats.rate(spiking[li - 1]["name"])
                layers.append(dict(name=layer["name"], macs=0.0,
                                   acs=layer["macs"] * T * in_rate))
        layers.append(dict(name=readout["name"], macs=readout["macs"], acs=0.0))
        return OpCounts(layers)
    return OpCounts([dict(name=layer["name"], macs=layer["macs"], acs=0.0)
                     for layer in model.plan])


def estimate_energy(counts: OpCounts, model: EnergyModel = EnergyModel()) -> float:
    """Joules per inference: macs * e_mac + acs * e_ac."""
    return counts.macs * model.e_mac + counts.acs * model.e_ac


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise EnergyError("cannot score an empty prediction list")
    if predictions.shape != labels.shape:
        raise EnergyError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    return float((predictions == labels).mean())


@dataclass
class WspReport:
    rows: list   # dicts: method, accuracy, energy, wsp
    ratios: dict  # first method's WSP / each other method's WSP

    def wsp(self, method: str) -> float:
        for row in self.rows:
            if row["method"] == method:
                return row["wsp"]
        raise KeyError(method)

    def best(self) -> str:
        return max(self.rows, key=lambda r: r["wsp"])["method"]


def compute_wsp(results) -> WspReport:
    """results: [(method, accuracy, energy_joules)], first entry is the
    reference method for the improvement ratios."""
    results = list(results)
    if not results:
        raise EnergyError("no methods to score")
    for method, acc, energy in results:
        if energy <= 0:
            raise EnergyError(f"{method}: energy must be > 0, got {energy}")
        if not 0.0 <= acc <= 1.0 + 1e-12:
            raise EnergyError(f"{method}: accuracy {acc} outside [0, 1]")
    max_acc = max(acc for _, acc, _ in results)
    min_energy = min(energy for _, _, energy in results)
    rows = []
    for method, acc, energy in results:
        acc_term = acc / max_acc if max_acc > 0 else 0.0
        rows.append(dict(method=method, accuracy=acc, energy=energy,
                         wsp=0.5 * acc_term + 0.5 * min_energy / energy))
    first = rows[0]
    ratios = {row["method"]: first["wsp"] / row["wsp"]
              for row in rows[1:] if row["wsp"] > 0}
    return WspReport(rows=rows, ratios=ratios)


def format_report(rows, report: WspReport, energy_model: EnergyModel) -> str:
    """Structured text: one record per method plus the ratio lines.

    rows: dicts with method, accuracy, energy, macs, acs (counts may be
    None for entries lacking instrumentation).
    """
    lines = [
        f"energy model: e_mac {energy_model.e_mac:.3e} J  "
        f"e_ac {energy_model.e_ac:.3e} J",
        "energy figures are per inference",
        "",
        f"{'method':<8} {'accuracy':>9} {'energy_J':>12} {'macs':>14} "
        f"{'acs':>14} {'wsp':>8}",
    ]
    for row in rows:
        wsp = report.wsp(row["method"])
        macs = f"{row['macs']:.0f}" if row.get("macs") is not None else "-"
        acs = f"{row['acs']:.0f}" if row.get("acs") is not None else "-"
        lines.append(f"{row['method']:<8} {row['accuracy']:>9.4f} "
                     f"{row['energy']:>12.4e} {macs:>14} {acs:>14} "
                     f"{wsp:>8.4f}")
    lines.append("")
    first = rows[0]["method"]
    for other, ratio in report.ratios.items():
        lines.append(f"wsp ratio {first}/{other}: {ratio:.4f}")
    lines.append(f"best wsp: {report.best()}")
    return "\n".join(lines) + "\n"
