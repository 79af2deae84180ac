import json
import logging
import os
import tempfile
import zlib

import numpy as np
import pandas as pd

logger = logging.getLogger("utils")


def ensure_dir_exists(directory):
    if directory and not os.path.exists(directory):
        os.makedirs(directory, exist_ok=True)
        logger.info(f"Created directory: {directory}")


def derive_seed(seed: int, namespace: str) -> int:
    """Namespaced sub-seed: SeedSequence over (seed, crc32(namespace))."""
    sequence = np.random.SeedSequence([int(seed), zlib.crc32(namespace.encode("utf-8"))])
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int, namespace: str = "") -> np.random.Generator:
    if namespace:
        seed = derive_seed(seed, namespace)
    return np.random.Generator(np.random.PCG64(seed))


def atomic_write_text(path: str, text: str):
    """Write to a temp file beside ``path`` and rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    ensure_dir_exists(directory)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def dumps_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: str, payload):
    atomic_write_text(path, dumps_json(payload))
    logger.info(f"Wrote {path}")


def write_csv(path: str, frame: pd.DataFrame):
    atomic_write_text(path, frame.to_csv(index=False, float_format=None, lineterminator="\n"))
    logger.info(f"Wrote {path}")
