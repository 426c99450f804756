"""Inputs whose outputs are frozen under tests/golden.

Run ``python3 tests/golden_cases.py`` to re-record after an intentional change.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from fedapa import data
from fedapa.orchestrator import mix_seed, sample_clients, SEED_ROUND

GOLDEN = Path(__file__).parent / "golden" / "hashes.json"


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj).encode()).hexdigest()


def compute() -> dict[str, str]:
    ds, _ = data.make_clustered_synthetic(3, 4, 4, 30, 6, 1.0, seed=11)
    dirichlet = data.partition_dirichlet(ds, 5, 0.3, seed=12)
    pathological = data.partition_pathological(ds, 6, 2, seed=13)
    split = data.split_train_test(dirichlet.shards[0], ds.labels, 5 / 6, seed=14)
    sampled = [sample_clients(20, 0.6, np.random.default_rng(mix_seed(0, SEED_ROUND, t))) for t in range(1, 6)]
    return {
        "synthetic_dataset": ds.digest(),
        "dirichlet_partition": dirichlet.digest(),
        "pathological_partition": pathological.digest(),
        "train_test_split": _sha(split),
        "sampled_clients": _sha(sampled),
    }


def load() -> dict[str, str]:
    return json.loads(GOLDEN.read_text())


if __name__ == "__main__":
    GOLDEN.parent.mkdir(exist_ok=True)
    GOLDEN.write_text(json.dumps(compute(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {GOLDEN}")
