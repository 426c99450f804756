"""Client local update and the server-side aggregation strategies.

The server-side FedAPA step for client ``i`` is

    theta_bar_i = Theta @ A_i                  (weighted aggregation)
    delta_i     = theta_i - theta_bar_i        (after local training)
    A_i        <- A_i + eta * Theta^T delta_i  (surrogate descent; literal sign flips it)
    A_i        <- normalize(selfweight(clip(A_i)))

With ``pms`` on, ``Theta`` holds feature extractors only; otherwise it holds
full models and the same code aggregates heads too.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import model as mdl
from .data import Dataset
from .numerics import (
    LayoutError,
    ParamMatrix,
    ParamVector,
    delta,
    mat_transpose_vec,
    norm2,
    split,
    weighted_sum,
)

STRATEGIES = ("fedapa", "fedavg", "local_only")
SIGN_CONVENTIONS = ("surrogate_descent", "literal_paper")
# absolute slack on the per-step drift inequality, for rounding in A_raw - A_prev
DRIFT_SLACK = 1e-12


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str = "fedapa"
    eta: float = 0.01
    mu: float = 0.5
    sign_convention: str = "surrogate_descent"
    pms: bool = True
    ablate_clip: bool = False
    ablate_self_weight: bool = False
    ablate_normalize: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise ValueError(f"sign_convention must be one of {SIGN_CONVENTIONS}")
        # eta == 0 is allowed as a degenerate no-learning setting
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")


@dataclass(frozen=True)
class WeightVector:
    owner: int
    a: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.a, dtype=np.float64).reshape(-1)
        a.flags.writeable = False
        object.__setattr__(self, "a", a)

    @classmethod
    def identity(cls, owner: int, num_clients: int) -> "WeightVector":
        a = np.zeros(num_clients)
        a[owner] = 1.0
        return cls(owner, a)

    def is_distribution(self, tol: float = 1e-9) -> bool:
        return bool(
            (self.a >= 0.0).all() and (self.a <= 1.0).all() and abs(self.a.sum() - 1.0) <= tol
        )


@dataclass
class ClientState:
    client_id: int
    phi: ParamVector
    momentum: mdl.MomentumState
    train_idx: tuple[int, ...]
    test_idx: tuple[int, ...]
    seed: int
    # last personalised shared vector received from the server (theta, or omega without pms)
    theta_bar: ParamVector | None = None


@dataclass(frozen=True)
class DriftCheck:
    client: int
    step_drift: float
    step_bound: float
    step_ok: bool
    cumulative_drift: float
    cumulative_bound: float
    cumulative_ok: bool


@dataclass
class ServerState:
    theta_store: ParamMatrix
    weights: list[WeightVector]
    round: int = 0
    max_param_norm: float = 0.0
    cumulative_drift: list[float] = field(default_factory=list)
    cumulative_theta_norm: list[float] = field(default_factory=list)

    @classmethod
    def initial(cls, columns: Sequence[ParamVector]) -> "ServerState":
        store = ParamMatrix.from_columns(columns)
        M = store.num_columns
        return cls(
            theta_store=store,
            weights=[WeightVector.identity(i, M) for i in range(M)],
            max_param_norm=max(norm2(c) for c in columns),
            cumulative_drift=[0.0] * M,
            cumulative_theta_norm=[0.0] * M,
        )

    @property
    def num_clients(self) -> int:
        return self.theta_store.num_columns

    def weight_matrix(self) -> np.ndarray:
        return np.stack([w.a for w in self.weights])


@dataclass(frozen=True)
class LocalMetrics:
    train_loss: float
    steps: int


def shared_vector(params: mdl.ModelParams, pms: bool) -> ParamVector:
    return params.theta if pms else params.omega()


def compose(shared: ParamVector, phi: ParamVector, pms: bool) -> mdl.ModelParams:
    """Client model from a downloaded shared vector and the local head."""
    if pms:
        return mdl.ModelParams(shared, phi)
    theta, head = split(shared, len(phi.layout))
    return mdl.ModelParams(theta, head)


def client_update(
    theta_bar: ParamVector,
    state: ClientState,
    ds: Dataset,
    epochs: int,
    batch_size: int,
    lr: float,
    momentum: float,
    rng: np.random.Generator,
    pms: bool = True,
) -> tuple[ParamVector, ClientState, LocalMetrics]:
    """Download ``theta_bar``, run ``epochs`` of mini-batch SGD, return the new shared vector."""
    if not state.train_idx:
        raise ValueError(f"client {state.client_id} has an empty training split")
    if epochs < 0 or batch_size < 1:
        raise ValueError("need epochs >= 0 and batch_size >= 1")
    params = compose(theta_bar, state.phi, pms)
    if params.phi.layout != state.phi.layout:
        raise LayoutError("downloaded vector does not carry a head of the client's layout")
    vel = state.momentum
    train = np.asarray(state.train_idx, dtype=np.int64)
    losses: list[float] = []
    steps = 0
    for _ in range(epochs):
        losses = []
        order = rng.permutation(train)
        for start in range(0, len(order), batch_size):
            X, y = ds.subset(order[start : start + batch_size])
            loss, grad = mdl.loss_and_grad(params, X, y)
            params, vel = mdl.sgd_momentum_step(params, grad, vel, lr, momentum)
            losses.append(loss * len(y))
            steps += 1
    if epochs == 0:
        return theta_bar, state, LocalMetrics(float("nan"), 0)
    new_state = replace(state, phi=params.phi, momentum=vel)
    train_loss = sum(losses) / len(train)
    return shared_vector(params, pms), new_state, LocalMetrics(train_loss, steps)


def fedapa_aggregate(server: ServerState, i: int) -> ParamVector:
    if not 0 <= i < server.num_clients:
        raise IndexError(f"client {i} outside [0, {server.num_clients})")
    return weighted_sum(server.theta_store, server.weights[i].a)


def update_weights(
    a: np.ndarray,
    theta_store: ParamMatrix,
    delta_i: ParamVector,
    eta: float,
    sign_convention: str = "surrogate_descent",
) -> np.ndarray:
    """Raw gradient step on client i's aggregation weights, before post-processing."""
    a = np.asarray(a, dtype=np.float64)
    g = mat_transpose_vec(theta_store, delta_i)
    if sign_convention == "surrogate_descent":
        return a + eta * g
    if sign_convention == "literal_paper":
        return a - eta * g
    raise ValueError(f"unknown sign convention {sign_convention!r}")


def postprocess(
    raw: np.ndarray,
    i: int,
    mu: float,
    ablate_clip: bool = False,
    ablate_self_weight: bool = False,
    ablate_normalize: bool = False,
) -> WeightVector:
    a = np.array(raw, dtype=np.float64)
    if not ablate_clip:
        a = np.minimum(np.maximum(a, 0.0), 1.0)
    if not ablate_self_weight:
        a[i] = mu
    if not ablate_normalize:
        total = a.sum()
        if total == 0.0 or not np.isfinite(total):
            raise ValueError(f"cannot normalise weights of client {i}: sum is {total}")
        a = a / total
    return WeightVector(i, a)


def postprocess_with(raw: np.ndarray, i: int, cfg: StrategyConfig) -> WeightVector:
    return postprocess(
        raw, i, cfg.mu, cfg.ablate_clip, cfg.ablate_self_weight, cfg.ablate_normalize
    )


def size_weights(sizes: Sequence[int]) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    if (sizes <= 0).any():
        raise ValueError("dataset sizes must be positive")
    return sizes / sizes.sum()


def fedavg_aggregate(params: ParamMatrix, sizes: Sequence[int]) -> ParamVector:
    """Size-weighted mean of the participants' shared vectors."""
    if params.num_columns == 0 or len(sizes) == 0:
        raise ValueError("FedAvg needs at least one participant")
    if len(sizes) != params.num_columns:
        raise ValueError("one size per participant required")
    return weighted_sum(params, size_weights(sizes))


def server_round_fedapa(
    server: ServerState,
    returns: Mapping[int, ParamVector],
    cfg: StrategyConfig,
) -> list[DriftCheck]:
    """Apply one round of weight learning for the clients in ``returns``.

    Every gradient uses the round-start store, the same ``Theta`` that formed
    the downloaded ``theta_bar``; columns are overwritten afterwards.
    """
    if not returns:
        raise ValueError("a round needs at least one participating client")
    snapshot = server.theta_store
    frob = snapshot.frobenius_norm()
    spectral = snapshot.spectral_norm()
    new_norms = {i: norm2(theta) for i, theta in returns.items()}
    run_max = max(server.max_param_norm, *new_norms.values())

    checks = []
    new_weights = list(server.weights)
    store = snapshot
    for i in sorted(returns):
        theta_i = returns[i]
        a_prev = server.weights[i].a
        theta_bar = weighted_sum(snapshot, a_prev)
        d = delta(theta_i, theta_bar)
        raw = update_weights(a_prev, snapshot, d, cfg.eta, cfg.sign_convention)
        new_weights[i] = postprocess_with(raw, i, cfg)
        store = store.replace_column(i, theta_i)

        step = float(np.linalg.norm(raw - a_prev))
        bound = cfg.eta * frob * norm2(d)
        server.cumulative_drift[i] += step
        server.cumulative_theta_norm[i] += spectral
        cum_bound = 2.0 * cfg.eta * run_max * server.cumulative_theta_norm[i]
        checks.append(
            DriftCheck(
                client=i,
                step_drift=step,
                step_bound=bound,
                step_ok=step <= bound * (1.0 + DRIFT_SLACK) + DRIFT_SLACK,
                cumulative_drift=server.cumulative_drift[i],
                cumulative_bound=cum_bound,
                cumulative_ok=server.cumulative_drift[i]
                <= cum_bound * (1.0 + DRIFT_SLACK) + DRIFT_SLACK,
            )
        )

    server.theta_store = store
    server.weights = new_weights
    server.max_param_norm = run_max
    server.round += 1
    return checks
