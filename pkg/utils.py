"""
Utility functions for the HRIS channel estimation toolkit
Common helper functions, logging setup and seeded random streams
"""

import logging
import math
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

# Entity ids for independent random streams keyed by (seed, stream, ...)
STREAM_GEOMETRY = 1
STREAM_CHANNELS = 2
STREAM_NOISE_RC = 3
STREAM_NOISE_BS = 4
STREAM_PARAMS = 5
STREAM_INIT = 6

SeedLike = Union[int, Sequence[int]]


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation"""


class DimensionError(ValueError):
    """Raised when array shapes disagree with the system configuration"""


def setup_logging(level: str = None, log_file: str = None):
    """Setup logging configuration"""

    # Get log level from environment or parameter
    if level is None:
        level = os.getenv("LOG_LEVEL", "INFO").upper()

    numeric_level = getattr(logging, level, logging.INFO)

    if log_file is None:
        log_file = os.getenv("LOG_FILE", "logs/hris.log")
    ensure_directory_exists(Path(log_file).parent)

    log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    date_format = "%Y-%m-%d %H:%M:%S"

    # Setup logging with both file and console handlers
    logging.basicConfig(
        level=numeric_level,
        format=log_format,
        datefmt=date_format,
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler(sys.stdout)
        ],
        force=True
    )

    # Reduce noise from external libraries
    logging.getLogger("torch").setLevel(logging.WARNING)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)

    logger = logging.getLogger(__name__)
    logger.info(f"Logging initialized at {level} level")
    logger.info(f"Log file: {log_file}")


def seed_key(seed: SeedLike) -> Tuple[int, ...]:
    """Normalize an int or a sequence of ints into a stream key"""
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def make_rng(seed: SeedLike, *keys: int) -> np.random.Generator:
    """
    Create a generator keyed by (seed, keys...).

    Every entity (geometry, channels, noise per receiver and sub-frame, trial)
    gets its own stream, so each draw can be replayed independently.
    """
    entropy = list(seed_key(seed)) + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def complex_gaussian(rng: np.random.Generator, shape, variance) -> np.ndarray:
    """Draw CN(0, variance) entries as (x + iy) * sqrt(variance / 2)"""
    x = rng.standard_normal(shape)
    y = rng.standard_normal(shape)
    return (x + 1j * y) * np.sqrt(np.asarray(variance, dtype=float) / 2.0)


def db_to_linear(db: float) -> float:
    """Convert dB to linear scale"""
    return 10.0 ** (db / 10.0)


def linear_to_db(linear: float) -> float:
    """Convert linear scale to dB"""
    if linear <= 0:
        raise DomainError(f"Cannot convert non-positive value {linear} to dB")
    return 10.0 * math.log10(linear)


def vec(matrix: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization"""
    return np.asarray(matrix).reshape(-1, order='F')


def unvec(vector: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of vec"""
    return np.asarray(vector).reshape((rows, cols), order='F')


def ensure_directory_exists(directory: Union[str, Path]):
    """Ensure a directory exists, create if it doesn't"""
    Path(directory).mkdir(parents=True, exist_ok=True)


def get_timestamp() -> str:
    """Get current timestamp in ISO format"""
    return datetime.now().isoformat(timespec='seconds')


def get_file_timestamp() -> str:
    """Timestamp safe to embed in file names"""
    return datetime.now().strftime("%Y%m%d-%H%M%S")
