"""Server/client state machines for the four federation protocols.

All operations are pure: they return new states and never mutate their
inputs, so a round can be replayed or computed in parallel over clients.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import NoProgressContact
from .problems import Problem, check_same_dim, check_vector
from .reweighting import (
    DETERMINISTIC,
    STOCHASTIC,
    StepCountDistribution,
    alpha,
    unbiased_update,
)

if TYPE_CHECKING:
    from .simulate import SpeedModel


@dataclass
class ClientState:
    """A client's local model, anchor, and step counter."""

    cid: int
    w_local: np.ndarray
    w_init: np.ndarray
    q: int
    mode: str
    dist: StepCountDistribution
    speed: Optional["SpeedModel"] = None

    def __post_init__(self):
        if not 0 <= self.q <= self.dist.max_steps:
            raise ValueError(f"step counter {self.q} outside [0, {self.dist.max_steps}]")

    @property
    def max_steps(self) -> int:
        return self.dist.max_steps


@dataclass
class ServerState:
    """Central model, round index, selection size, and learning rate."""

    w: np.ndarray
    t: int
    s: int
    eta: float


@dataclass
class FedBuffState:
    """Server model plus the update buffer of capacity Z."""

    w: np.ndarray
    capacity: int
    buffer: list
    rounds_completed: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("buffer capacity must be >= 1")


def fresh_client(
    cid: int,
    w0: np.ndarray,
    mode: str,
    dist: StepCountDistribution,
    speed: Optional["SpeedModel"] = None,
) -> ClientState:
    w0 = check_vector(w0)
    return ClientState(cid=cid, w_local=w0.copy(), w_init=w0.copy(), q=0,
                       mode=mode, dist=dist, speed=speed)


def client_local_step(
    c: ClientState, problem: Problem, eta: float, rng: np.random.Generator
) -> ClientState:
    """One local SGD step: w <- w - eta * g(w), q <- q + 1."""
    if c.q >= c.max_steps:
        raise ValueError(f"client {c.cid} already at q = {c.q}; must wait for contact")
    g = problem.stochastic_gradient(c.cid, c.w_local, rng)
    return replace(c, w_local=c.w_local - eta * g, q=c.q + 1)


def favano_payload(c: ClientState) -> np.ndarray:
    """Reweighted model a client reports when contacted.

    Stochastic mode at q = 0 falls back to the anchor (zero contribution),
    matching the positive-step indicator in the estimator.
    """
    try:
        a = alpha(c.mode, c.dist, realized_steps=c.q)
    except NoProgressContact:
        return c.w_init.copy()
    return unbiased_update(c.w_init, c.w_local, a)


def reset_client(c: ClientState, w_server: np.ndarray) -> ClientState:
    """Adopt the server model as the new anchor and restart local training."""
    w_server = check_vector(w_server)
    check_same_dim(w_server, c.w_local)
    return replace(c, w_local=w_server.copy(), w_init=w_server.copy(), q=0)


def favano_client_contact(
    c: ClientState, w_server: np.ndarray
) -> tuple[np.ndarray, ClientState]:
    """Interrupt a client: emit its reweighted payload, then reset its state."""
    return favano_payload(c), reset_client(c, w_server)


def favano_server_round(srv: ServerState, payloads: list[np.ndarray]) -> ServerState:
    """w <- (w_prev + sum payloads) / (s + 1)."""
    if len(payloads) != srv.s:
        raise ValueError(f"expected {srv.s} payloads, got {len(payloads)}")
    w = check_vector(srv.w)
    for p in payloads:
        check_same_dim(w, check_vector(p))
    new_w = (srv.w + sum(payloads)) / (srv.s + 1)
    return replace(srv, w=new_w, t=srv.t + 1)


def quafl_round(
    srv: ServerState, clients: list[ClientState]
) -> tuple[ServerState, list[ClientState]]:
    """Convex-combination update for server and the selected clients.

    The server mixes in the raw local models; each selected client keeps an
    s/(s+1) weight on its own model, which is the source of client drift
    under heterogeneous data.
    """
    if len(clients) != srv.s:
        raise ValueError(f"expected {srv.s} clients, got {len(clients)}")
    s = srv.s
    new_w = (srv.w + sum(c.w_local for c in clients)) / (s + 1)
    new_clients = []
    for c in clients:
        mixed = srv.w / (s + 1) + c.w_local * (s / (s + 1))
        new_clients.append(replace(c, w_local=mixed.copy(), w_init=mixed.copy(), q=0))
    return replace(srv, w=new_w, t=srv.t + 1), new_clients


def fedavg_round(
    srv: ServerState,
    selected: list[int],
    problem: Problem,
    eta: float,
    local_steps: int,
    rng: np.random.Generator,
) -> ServerState:
    """Synchronous round: every selected client runs exactly K local steps
    from the current server model; the server averages the results."""
    if local_steps < 0:
        raise ValueError("local_steps must be >= 0")
    if not selected:
        raise ValueError("need at least one selected client")
    models = []
    for cid in selected:
        w = srv.w.copy()
        for _ in range(local_steps):
            w = w - eta * problem.stochastic_gradient(cid, w, rng)
        models.append(w)
    new_w = sum(models) / len(models)
    return replace(srv, w=new_w, t=srv.t + 1)


def fedbuff_step(
    state: FedBuffState, delta: np.ndarray, eta_server: float = 1.0
) -> FedBuffState:
    """Append one client delta; flush when the buffer reaches capacity.

    On flush: w <- w - eta_server * mean(deltas), buffer cleared.
    """
    delta = check_vector(delta)
    check_same_dim(delta, state.w)
    buffer = state.buffer + [delta]
    if len(buffer) < state.capacity:
        return replace(state, buffer=buffer)
    avg = sum(buffer) / len(buffer)
    return replace(
        state,
        w=state.w - eta_server * avg,
        buffer=[],
        rounds_completed=state.rounds_completed + 1,
    )
