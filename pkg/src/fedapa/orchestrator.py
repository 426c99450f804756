"""Experiment driver: data setup, seeded client sampling, the round loop and metric output."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import data as data_mod
from . import fl_core
from .data import Dataset, PartitionResult
from .model import ModelParams, ModelSpec, MomentumState, forward_batch, init_params, PROB_FLOOR
from .numerics import ParamMatrix, ParamVector, split

log = logging.getLogger(__name__)

# domain tags for seed derivation; see mix_seed
SEED_CLIENT, SEED_ROUND, SEED_DATA, SEED_SPLIT, SEED_INIT, SEED_PARTITION = range(1, 7)


def mix_seed(master: int, domain: int, index: int) -> int:
    """Derive an independent 64-bit seed from (master, domain, index).

    Uses numpy's SeedSequence hashing; client seeds are ``mix_seed(master,
    SEED_CLIENT, client_id)`` and round seeds ``mix_seed(master, SEED_ROUND, t)``.
    """
    ss = np.random.SeedSequence([int(master), int(domain), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"
    path: str | None = None
    clusters: int = 3
    samples_per_client: int = 180
    input_dim: int = 200
    classes: int = 4
    cluster_shift: float = 1.0


@dataclass(frozen=True)
class PartitionConfig:
    kind: str = "clustered"
    alpha: float = 0.1
    classes_per_client: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: fl_core.StrategyConfig = field(default_factory=fl_core.StrategyConfig)
    dataset: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    clients: int = 12
    rounds: int = 50
    local_epochs: int = 2
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    participation_fraction: float = 0.6
    seed: int = 0
    train_fraction: float = 5 / 6
    hidden_dims: tuple[int, ...] = (32, 16)
    reset_momentum: bool = False

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be nonnegative")
        if self.clients < 1 or self.batch_size < 1:
            raise ValueError("clients and batch_size must be positive")
        if not 0.0 < self.participation_fraction <= 1.0:
            raise ValueError("participation_fraction must lie in (0, 1]")
        if self.lr < 0 or not 0.0 <= self.momentum < 1.0:
            raise ValueError("need lr >= 0 and momentum in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class RoundRecord:
    round: int
    sampled: list[int]
    client_acc: list[float]
    client_loss: list[float]
    mean_acc: float
    weighted_acc: float
    mean_loss: float
    train_loss: float | None
    transmitted_params: int
    cumulative_transmitted_params: int
    drift_ok: bool | None
    cumulative_drift_ok: bool | None
    max_drift_ratio: float | None
    config_sha256: str
    duration_s: float = 0.0

    def to_json(self) -> str:
        d = asdict(self)
        # wall-clock time is kept out of the metrics stream so reruns are byte-identical
        d.pop("duration_s")
        return json.dumps(d)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    weight_matrix: np.ndarray | None
    models: list[ModelParams]
    spec: ModelSpec
    dataset_digest: str
    partition: PartitionResult
    cluster_assignment: list[int] | None
    weight_snapshots: list[np.ndarray] = field(default_factory=list)
    drift_checks: list[list[fl_core.DriftCheck]] = field(default_factory=list)

    @property
    def final(self) -> RoundRecord:
        return self.records[-1]


def sample_clients(num_clients: int, fraction: float, rng: np.random.Generator) -> list[int]:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("participation fraction must lie in (0, 1]")
    k = min(num_clients, math.ceil(fraction * num_clients - 1e-9))
    return sorted(int(i) for i in rng.choice(num_clients, size=k, replace=False))


def evaluate(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Accuracy and mean cross-entropy; argmax ties go to the lowest class index."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty test split")
    probs = forward_batch(params, features)
    pred = np.argmax(probs, axis=1)
    picked = probs[np.arange(len(labels)), labels]
    acc = float(np.mean(pred == labels))
    loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    return acc, loss


def weighted_accuracy(accs: Sequence[float], sizes: Sequence[int]) -> float:
    if len(accs) != len(sizes):
        raise ValueError(f"{len(accs)} accuracies but {len(sizes)} sizes")
    w = fl_core.size_weights(sizes)
    return float(sum(wi * a for wi, a in zip(w, accs)))


def comm_count(spec: ModelSpec, pms: bool) -> int:
    """Parameters moved per participating client per round, download plus upload."""
    return 2 * (spec.extractor_size if pms else spec.total_size)


def build_dataset(cfg: ExperimentConfig) -> tuple[Dataset, list[int] | None]:
    dc = cfg.dataset
    if dc.kind == "synthetic":
        if cfg.clients % dc.clusters:
            raise ValueError(f"{cfg.clients} clients do not split evenly into {dc.clusters} clusters")
        return data_mod.make_clustered_synthetic(
            clusters=dc.clusters,
            clients_per_cluster=cfg.clients // dc.clusters,
            classes=dc.classes,
            samples_per_client=dc.samples_per_client,
            input_dim=dc.input_dim,
            cluster_shift=dc.cluster_shift,
            seed=mix_seed(cfg.seed, SEED_DATA, 0),
        )
    if dc.kind == "csv":
        if not dc.path:
            raise ValueError("dataset.path is required for csv data")
        return data_mod.load_csv(dc.path), None
    raise ValueError(f"unknown dataset kind {dc.kind!r}")


def build_partition(cfg: ExperimentConfig, ds: Dataset) -> PartitionResult:
    pc = cfg.partition
    seed = mix_seed(cfg.seed, SEED_PARTITION, 0)
    if pc.kind == "clustered":
        if cfg.dataset.kind != "synthetic":
            raise ValueError("clustered partition needs the synthetic dataset")
        return data_mod.contiguous_partition(cfg.clients, cfg.dataset.samples_per_client)
    if pc.kind == "dirichlet":
        # two samples per client so every shard can be split into train and test
        return data_mod.partition_dirichlet(ds, cfg.clients, pc.alpha, seed, min_size=2)
    if pc.kind == "pathological":
        return data_mod.partition_pathological(ds, cfg.clients, pc.classes_per_client, seed)
    raise ValueError(f"unknown partition kind {pc.kind!r}")


def _client_model(state: fl_core.ClientState, pms: bool) -> ModelParams:
    return fl_core.compose(state.theta_bar, state.phi, pms)


def run_experiment(
    cfg: ExperimentConfig, workers: int = 1, snapshot_weights: bool = False
) -> ExperimentResult:
    ds, assignment = build_dataset(cfg)
    part = build_partition(cfg, ds)
    spec = ModelSpec(ds.input_dim, ds.num_classes, cfg.hidden_dims)
    st = cfg.strategy
    pms = st.pms
    M = cfg.clients
    cfg_hash = cfg.digest()

    # one shared initial model, as if broadcast by the server before round 1
    init = init_params(spec, np.random.default_rng(mix_seed(cfg.seed, SEED_INIT, 0)))
    shared0 = fl_core.shared_vector(init, pms)
    clients: list[fl_core.ClientState] = []
    for m, shard in enumerate(part.shards):
        train, test = data_mod.split_train_test(
            shard, ds.labels, cfg.train_fraction, mix_seed(cfg.seed, SEED_SPLIT, m)
        )
        clients.append(
            fl_core.ClientState(
                client_id=m,
                phi=init.phi,
                momentum=MomentumState.zeros(spec),
                train_idx=tuple(train),
                test_idx=tuple(test),
                seed=mix_seed(cfg.seed, SEED_CLIENT, m),
                theta_bar=shared0,
            )
        )
    sizes = [len(c.train_idx) for c in clients]
    server = fl_core.ServerState.initial([shared0] * M) if st.strategy == "fedapa" else None
    global_vec = shared0
    per_client = comm_count(spec, pms) if st.strategy != "local_only" else 0

    records: list[RoundRecord] = []
    total_sent = 0
    snapshots: list[np.ndarray] = []
    all_checks: list[list[fl_core.DriftCheck]] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    # a diverging variant surfaces as a non-finite ParamVector error, so numpy's
    # overflow warnings would only repeat it
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            for t in range(1, cfg.rounds + 1):
                started = time.perf_counter()
                try:
                    sampled = sample_clients(
                        M, cfg.participation_fraction, np.random.default_rng(mix_seed(cfg.seed, SEED_ROUND, t))
                    )
                    if st.strategy == "fedapa":
                        downloads = {i: fl_core.fedapa_aggregate(server, i) for i in sampled}
                    elif st.strategy == "fedavg":
                        downloads = {i: global_vec for i in sampled}
                    else:
                        downloads = {i: clients[i].theta_bar for i in sampled}

                    def work(i: int):
                        state = clients[i]
                        if cfg.reset_momentum:
                            state = replace(state, momentum=MomentumState.zeros(spec))
                        rng = np.random.default_rng([state.seed, t])
                        with np.errstate(over="ignore", invalid="ignore"):
                            return fl_core.client_update(
                                downloads[i], state, ds, cfg.local_epochs, cfg.batch_size,
                                cfg.lr, cfg.momentum, rng, pms,
                            )

                    if pool is not None:
                        outs = dict(zip(sampled, pool.map(work, sampled)))
                    else:
                        outs = {i: work(i) for i in sampled}

                    uploaded = {i: outs[i][0] for i in sampled}
                    for i in sampled:
                        clients[i] = outs[i][1]

                    checks: list[fl_core.DriftCheck] = []
                    if st.strategy == "fedapa":
                        checks = fl_core.server_round_fedapa(server, uploaded, st)
                        delivered = {i: fl_core.fedapa_aggregate(server, i) for i in sampled}
                    elif st.strategy == "fedavg":
                        global_vec = fl_core.fedavg_aggregate(
                            ParamMatrix.from_columns([uploaded[i] for i in sampled]),
                            [sizes[i] for i in sampled],
                        )
                        delivered = {i: global_vec for i in sampled}
                    else:
                        delivered = uploaded
                    for i in sampled:
                        state = replace(clients[i], theta_bar=delivered[i])
                        if not pms:
                            state = replace(state, phi=split(delivered[i], len(spec.head_layout))[1])
                        clients[i] = state

                    accs, losses = [], []
                    for c in clients:
                        X, y = ds.subset(c.test_idx)
                        acc, loss = evaluate(_client_model(c, pms), X, y)
                        accs.append(acc)
                        losses.append(loss)
                    train_losses = [outs[i][2].train_loss for i in sampled if outs[i][2].steps]
                except Exception as exc:
                    raise RuntimeError(f"round {t} failed: {exc}") from exc

                ratio = None
                if checks:
                    ratio = max(
                        (c.step_drift / c.step_bound) if c.step_bound > 0 else 0.0 for c in checks
                    )
                    all_checks.append(checks)
                records.append(
                    RoundRecord(
                        round=t,
                        sampled=sampled,
                        client_acc=accs,
                        client_loss=losses,
                        mean_acc=float(np.mean(accs)),
                        weighted_acc=weighted_accuracy(accs, sizes),
                        mean_loss=float(np.mean(losses)),
                        train_loss=float(np.mean(train_losses)) if train_losses else None,
                        transmitted_params=per_client * len(sampled),
                        cumulative_transmitted_params=total_sent + per_client * len(sampled),
                        drift_ok=all(c.step_ok for c in checks) if checks else None,
                        cumulative_drift_ok=all(c.cumulative_ok for c in checks) if checks else None,
                        max_drift_ratio=ratio,
                        config_sha256=cfg_hash,
                        duration_s=time.perf_counter() - started,
                    )
                )
                total_sent = records[-1].cumulative_transmitted_params
                if snapshot_weights and server is not None:
                    snapshots.append(server.weight_matrix())
                log.debug("round %d mean_acc=%.4f", t, records[-1].mean_acc)
        finally:
            if pool is not None:
                pool.shutdown()

    return ExperimentResult(
        config=cfg,
        records=records,
        weight_matrix=server.weight_matrix() if server is not None else None,
        models=[_client_model(c, pms) for c in clients],
        spec=spec,
        dataset_digest=ds.digest(),
        partition=part,
        cluster_assignment=assignment,
        weight_snapshots=snapshots,
        drift_checks=all_checks,
    )


def write_weight_csv(matrix: np.ndarray, path: Path) -> None:
    with path.open("w") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_outputs(result: ExperimentResult, out_dir: str | Path, resolved: dict[str, Any]) -> Path:
    """Write metrics.jsonl, timings.jsonl, config.json, partition.json, models.json and snapshots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"config": resolved, "config_sha256": result.config.digest()}, indent=2) + "\n"
    )
    with (out / "metrics.jsonl").open("w") as fh:
        for rec in result.records:
            fh.write(rec.to_json() + "\n")
    with (out / "timings.jsonl").open("w") as fh:
        for rec in result.records:
            fh.write(json.dumps({"round": rec.round, "duration_s": rec.duration_s}) + "\n")
    (out / "partition.json").write_text(result.partition.to_json() + "\n")
    models = {
        "config_sha256": result.config.digest(),
        "extractor_layout": [list(s) for s in result.spec.extractor_layout],
        "head_layout": [list(s) for s in result.spec.head_layout],
        "clients": [
            {"id": m, "theta": p.theta.tolist(), "phi": p.phi.tolist()}
            for m, p in enumerate(result.models)
        ],
        "weights": None if result.weight_matrix is None else result.weight_matrix.tolist(),
    }
    (out / "models.json").write_text(json.dumps(models) + "\n")
    if result.weight_snapshots:
        snap_dir = out / "weights"
        snap_dir.mkdir(exist_ok=True)
        for t, matrix in enumerate(result.weight_snapshots, start=1):
            write_weight_csv(matrix, snap_dir / f"round_{t:04d}.csv")
    return out


def load_models(path: str | Path) -> list[ModelParams]:
    raw = json.loads(Path(path).read_text())
    theta_layout = tuple(tuple(s) for s in raw["extractor_layout"])
    head_layout = tuple(tuple(s) for s in raw["head_layout"])
    return [
        ModelParams(ParamVector(c["theta"], theta_layout), ParamVector(c["phi"], head_layout))
        for c in raw["clients"]
    ]
