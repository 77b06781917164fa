"""
Configuration settings for the qcap pipeline
"""

import os
from dotenv import load_dotenv, find_dotenv

# Load environment variables
load_dotenv(find_dotenv(usecwd=True))


class Settings:
    """Pipeline settings"""

    # Runtime configuration
    LOG_DIR: str = os.getenv('QCAP_LOG_DIR', 'logs')
    LOG_LEVEL: str = os.getenv('QCAP_LOG_LEVEL', 'INFO').upper()
    OUTPUT_DIR: str = os.getenv('QCAP_OUTPUT_DIR', 'runs')
    MAX_WORKERS: int = int(os.getenv('QCAP_MAX_WORKERS', '1'))

    # Exact (superoperator) simulation is capped; PTMs are 4^n x 4^n
    EXACT_QUBIT_CAP: int = int(os.getenv('QCAP_EXACT_QUBIT_CAP', '4'))

    # Circuit sampling
    DEPTH_CAPS: dict = {1: 180, 2: 90, 3: 60, 4: 45}
    DENSITY_RANGE: tuple = (0.0, 2.0 / 3.0)
    MIRROR_DEPTH_DIVISOR: int = 6

    # Error models
    COHERENT_MAX_STRENGTH: float = 2.5e-4
    WEIGHT1_MAX_S: float = 1e-7
    WEIGHT1_MAX_H: float = 5e-5

    # Tracked error sets, keyed by graph spec; anything else falls back to DEFAULT_HOPS
    DEVICE_HOPS: dict = {'ring:4': 2, 'tbar:5': 2, 'bowtie:5': 3}
    DEFAULT_HOPS: int = 2
    LARGE_DEVICE_QUBITS: int = 8  # at or above this size, track weight-1 errors only

    # Datasets
    DEFAULT_THRESHOLD: float = 0.85
    LARGE_DEVICE_THRESHOLD: float = 0.91
    DEFAULT_SPLIT: tuple = (0.5625, 0.1875, 0.25)
    DATASET_SCHEMA: int = 1
    CHECKPOINT_SCHEMA: int = 1

    # Network and training
    DENSE_UNITS: tuple = (30, 20, 10, 5, 5, 1)
    FILTER_HOPS: int = 1
    MEASUREMENT_FILTER_HOPS: int = 1
    TARGET_SCALE: float = float(os.getenv('QCAP_TARGET_SCALE', '10000'))
    OUTPUT_GAIN: float = 1e-2
    LEARNING_RATE: float = 1e-3
    BATCH_SIZE: int = 32
    EVAL_BATCH_SIZE: int = 64
    NET_GROUP_SIZE: int = 32
    MAX_EPOCHS: int = 500
    PATIENCE: int = 20

    # Evaluation
    CLIP: float = float(os.getenv('QCAP_CLIP', '1e-6'))


settings = Settings()
