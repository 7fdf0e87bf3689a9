"""Rank-based consensus fusion of uncalibrated, tone-mapped images.

Modules:

- :mod:`enhance.rankcore`: stable argsort, tied ranks, Kendall tau
- :mod:`enhance.consensus`: consensus state, update/merge, render, persistence
- :mod:`enhance.register`: star detection, quad hashing, solving, resampling
- :mod:`enhance.synth`: synthetic scenes and corrupted observations
- :mod:`enhance.pipeline`: batch combine runs and metrics
"""

from .consensus import (
    Canvas,
    ConsensusState,
    ObservedImage,
    histogram_weights,
    init_from_image,
    init_random,
    is_frozen,
    load_state,
    merge,
    render,
    save_state,
    update,
)
from .rankcore import argsort, kendall_tau, kendall_tau_sampled, tied_ranks

__version__ = "0.1.0"
