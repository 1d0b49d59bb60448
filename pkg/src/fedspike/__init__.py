"""fedspike: federated spiking-network benchmarking for EEG motor imagery.

A self-contained toolkit that ingests EDF/EDF+ recordings, builds labeled
motor-imagery trials, trains a spiking classifier (plus CNN and LSTM
baselines) with surrogate-gradient BPTT under simulated FedAvg, and compares
the methods on accuracy, estimated per-inference energy, and the combined
weighted system performance score.
"""

__version__ = "0.1.0"

from .autodiff import (  # noqa: F401
    GradientSet,
    NumericsError,
    ParameterSet,
    Tape,
    backward,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    substream,
)
