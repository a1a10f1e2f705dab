"""
Input signal generators for armaxlab.
"""

from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from scipy import signal

from armaxlab.errors import ConfigError, TrajectoryParseError
from armaxlab.model_core import make_rng

INPUT_STREAM = 1


def white_input(horizon: int, variance: float, seed: int) -> np.ndarray:
    """Gaussian white input with the given variance, on its own stream of seed."""
    if variance < 0:
        raise ConfigError(f"input variance must be non-negative, got {variance}")
    return np.sqrt(variance) * make_rng(seed, INPUT_STREAM).standard_normal(horizon)


def prbs_input(horizon: int, amplitude: float, seed: int, nbits: int = 10) -> np.ndarray:
    """
    Maximal-length shift-register sequence mapped to +/- amplitude.

    The register start state is drawn from the seed (never all zeros), so
    different seeds give shifted copies of the same period-(2^nbits - 1) sequence.
    """
    if nbits < 2:
        raise ConfigError(f"nbits must be >= 2, got {nbits}")
    state = make_rng(seed, INPUT_STREAM).integers(0, 2, size=nbits)
    if not state.any():
        state[0] = 1
    bits, _ = signal.max_len_seq(nbits, state=state, length=horizon)
    return amplitude * (2.0 * bits.astype(float) - 1.0)


def file_input(path: Union[str, Path], column: str = "u") -> np.ndarray:
    """Input column of a CSV file."""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise TrajectoryParseError(f"cannot read input file {path}: {e}")
    if column not in frame.columns:
        raise TrajectoryParseError(f"input file {path} has no column '{column}'")
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna()
    if bad.any():
        raise TrajectoryParseError(f"non-numeric value in column '{column}'", row=int(np.argmax(bad.to_numpy())) + 1)
    return values.to_numpy(dtype=float)
