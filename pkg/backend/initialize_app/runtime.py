import logging
import random
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch


def prepare_runtime(seed: int, threads: Optional[int] = None, deterministic: bool = True) -> np.random.Generator:
    """Seed every random stream and pin torch to reproducible kernels.

    Returns:
        The numpy generator the run draws all of its sampling from.
    """
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    if threads is not None:
        torch.set_num_threads(threads)
    if deterministic:
        try:
            torch.use_deterministic_algorithms(True, warn_only=True)
        except Exception as e:
            logging.warning(f"Deterministic kernels unavailable: {e}")
    logging.info(f"Runtime prepared: seed={seed}, threads={torch.get_num_threads()}, deterministic={deterministic}")
    return np.random.default_rng(seed)


def create_run_dir(output_dir: Union[str, Path]) -> Path:
    run_dir = Path(output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    logging.info(f"Writing run outputs to {run_dir.resolve()}")
    return run_dir
