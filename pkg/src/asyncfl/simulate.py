"""Discrete-event clock, client speed models, and the experiment driver.

Time is logical.  A FAVANO/QuAFL round always costs the server interaction
time plus the server waiting time; a FedAvg round waits for the slowest
selected client to finish its K local steps; a FedBuff round lasts until
the Z-th client update arrives.  Per-step client durations are geometric
(mean 2 for fast clients, 16 for slow ones), and the number of local steps
a client fits in a contact window is the renewal count of those durations.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics as metrics_mod
from .data import split_dataset
from .errors import ConfigError
from .problems import LogisticProblem, MLPProblem, Problem, QuadraticProblem
from .protocols import (
    ClientState,
    FedBuffState,
    ServerState,
    client_local_step,
    favano_payload,
    favano_server_round,
    fedavg_round,
    fedbuff_step,
    fresh_client,
    quafl_round,
    reset_client,
)
from .reweighting import DETERMINISTIC, MODES, StepCountDistribution, clipped_geometric
from .rng import substream

FAST_LAMBDA = 0.5
SLOW_LAMBDA = 1.0 / 16.0
METHODS = ("favano", "quafl", "fedavg", "fedbuff")


@dataclass(frozen=True)
class SpeedModel:
    """Per-step duration sampler: Geometric(lam) time units on {1, 2, ...}."""

    label: str  # "fast" | "slow"
    lam: float

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError(f"lam must lie in (0, 1], got {self.lam}")

    def sample_step_time(self, rng: np.random.Generator) -> int:
        return int(rng.geometric(self.lam))

    @classmethod
    def fast(cls) -> "SpeedModel":
        return cls("fast", FAST_LAMBDA)

    @classmethod
    def slow(cls) -> "SpeedModel":
        return cls("slow", SLOW_LAMBDA)


@dataclass
class ClockLedger:
    """Simulated clock plus the per-round duration log."""

    now: float = 0.0
    server_wait: float = 4.0
    server_interact: float = 3.0
    durations: list = field(default_factory=list)

    def advance(self, duration: float) -> float:
        if duration < 0:
            raise ValueError("durations are non-negative")
        self.now += duration
        self.durations.append(duration)
        return self.now


def sample_selection(n: int, s: int, rng: np.random.Generator) -> list[int]:
    """s distinct client ids, uniform over all C(n, s) subsets."""
    if not 1 <= s <= n:
        raise ValueError(f"need 1 <= s <= n, got s={s}, n={n}")
    return sorted(int(i) for i in rng.choice(n, size=s, replace=False))


def elapse_steps(
    speed: SpeedModel, window: float, max_steps: int, rng: np.random.Generator
) -> int:
    """Local steps completed in a contact window, clipped at ``max_steps``.

    Per-step durations are i.i.d. Geometric(lam); the count is the largest q
    whose cumulative duration fits in the window.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    elapsed = 0
    steps = 0
    while steps < max_steps:
        elapsed += speed.sample_step_time(rng)
        if elapsed > window:
            break
        steps += 1
    return steps


def fedbuff_feed_time(
    speeds: list[SpeedModel],
    capacity: int,
    rng: np.random.Generator,
    steps_per_update: int = 1,
) -> float:
    """Time until the Z-th client update arrives, all clients starting fresh.

    Each client produces an update every ``steps_per_update`` sampled step
    durations; ties are broken by client id.
    """
    heap: list[tuple[float, int]] = []
    for cid, sp in enumerate(speeds):
        t = sum(sp.sample_step_time(rng) for _ in range(steps_per_update))
        heapq.heappush(heap, (float(t), cid))
    arrival = 0.0
    for _ in range(capacity):
        t, cid = heapq.heappop(heap)
        arrival = t
        nxt = t + sum(speeds[cid].sample_step_time(rng) for _ in range(steps_per_update))
        heapq.heappush(heap, (nxt, cid))
    return float(arrival)


def round_duration(
    method: str,
    ledger: ClockLedger,
    selected_speeds: list[SpeedModel],
    rng: np.random.Generator,
    max_steps: int = 1,
    buffer_capacity: int = 1,
) -> float:
    """Simulated duration of one server round for the given method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method in ("favano", "quafl"):
        return ledger.server_interact + ledger.server_wait
    if method == "fedavg":
        step_times = [sp.sample_step_time(rng) for sp in selected_speeds]
        return ledger.server_interact + max_steps * max(step_times)
    feed = fedbuff_feed_time(selected_speeds, buffer_capacity, rng)
    return ledger.server_interact + feed


@dataclass
class RunConfig:
    """Validated description of one experiment."""

    method: str = "favano"
    n: int = 10
    s: int = 3
    max_steps: int = 5  # K, local-step cap per contact
    eta: float = 0.1
    reweight: str = DETERMINISTIC
    seed: int = 0
    time_budget: float | None = 700.0
    rounds: int | None = None  # T; overrides time_budget when set
    problem: str = "quadratic"  # quadratic | logistic | mlp | mnist
    dim: int = 5
    noise_sigma: float = 0.0
    fast_fraction: float = 2.0 / 3.0
    buffer_capacity: int = 10  # Z, fedbuff only
    eta_server: float = 1.0  # fedbuff server step size
    split_mode: str = "two-class-non-iid"
    num_classes: int = 10
    examples_per_class: int = 120
    test_examples_per_class: int = 40
    hidden: int = 16
    mnist_images: str | None = None
    mnist_labels: str | None = None
    mnist_test_images: str | None = None
    mnist_test_labels: str | None = None
    eval_stride: int = 1
    server_wait: float = 4.0
    server_interact: float = 3.0
    step_count_mode: str = "time"  # "time" (renewal windows) | "direct" (draw E)
    # harness knobs for the FedAvg reduction identity
    force_alpha_one: bool = False
    server_mean_only: bool = False
    fixed_step_count: int | None = None

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {METHODS}")
        if self.n < 1:
            raise ConfigError("n", "must be >= 1")
        if not 1 <= self.s <= self.n:
            raise ConfigError("s", f"must satisfy 1 <= s <= n={self.n}")
        if self.max_steps < 1:
            raise ConfigError("max_steps", "must be >= 1")
        if self.eta < 0:
            raise ConfigError("eta", "must be >= 0")
        if self.reweight not in MODES:
            raise ConfigError("reweight", f"must be one of {MODES}")
        if self.rounds is None and self.time_budget is None:
            raise ConfigError("time_budget", "either time_budget or rounds is required")
        if self.rounds is not None and self.rounds < 0:
            raise ConfigError("rounds", "must be >= 0")
        if self.time_budget is not None and self.time_budget < 0:
            raise ConfigError("time_budget", "must be >= 0")
        if not 0.0 <= self.fast_fraction <= 1.0:
            raise ConfigError("fast_fraction", "must lie in [0, 1]")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity", "must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma", "must be >= 0")
        if self.eval_stride < 1:
            raise ConfigError("eval_stride", "must be >= 1")
        if self.step_count_mode not in ("time", "direct"):
            raise ConfigError("step_count_mode", "must be 'time' or 'direct'")
        if self.problem not in ("quadratic", "logistic", "mlp", "mnist"):
            raise ConfigError("problem", "must be quadratic, logistic, mlp, or mnist")
        if self.problem == "mnist" and not (self.mnist_images and self.mnist_labels):
            raise ConfigError("mnist_images", "mnist problem needs IDX file paths")
        if self.fixed_step_count is not None and not (
            0 <= self.fixed_step_count <= self.max_steps
        ):
            raise ConfigError("fixed_step_count", "must lie in [0, max_steps]")
        return self


@dataclass
class ProtocolRun:
    """Everything a completed run produced."""

    config: RunConfig
    records: list  # metrics_mod.MetricsRecord, sorted by round
    trace: list  # per-round event dicts
    server_w: np.ndarray
    client_ws: np.ndarray  # (n, dim) client anchors at the end of the run
    speed_labels: list[str]


def assign_speeds(n: int, fast_fraction: float, rng: np.random.Generator) -> list[SpeedModel]:
    """floor(n * slow_fraction) slow clients, placed uniformly at random."""
    n_slow = int(np.floor(n * (1.0 - fast_fraction)))
    slow_ids = set(int(i) for i in rng.choice(n, size=n_slow, replace=False))
    return [SpeedModel.slow() if i in slow_ids else SpeedModel.fast() for i in range(n)]


def _synthetic_blobs(
    centers: np.ndarray, per_class: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian class clusters with unit-scale noise around the given centers."""
    num_classes = centers.shape[0]
    features = np.concatenate(
        [centers[c] + rng.standard_normal((per_class, centers.shape[1]))
         for c in range(num_classes)]
    )
    labels = np.repeat(np.arange(num_classes), per_class)
    perm = rng.permutation(len(labels))
    return features[perm], labels[perm]


def build_problem(config: RunConfig, master_seed: int):
    """Instantiate the configured problem plus an optional test set."""
    rng = substream(master_seed, "dataset")
    if config.problem == "quadratic":
        problem = QuadraticProblem.heterogeneous(
            config.n, config.dim, rng, noise_sigma=config.noise_sigma
        )
        return problem, None
    if config.problem == "mnist":
        from .data import load_idx_dataset

        features, labels = load_idx_dataset(config.mnist_images, config.mnist_labels)
        test = None
        if config.mnist_test_images and config.mnist_test_labels:
            test = load_idx_dataset(config.mnist_test_images, config.mnist_test_labels)
        shards = split_dataset(features, labels, config.n, config.split_mode, rng)
        problem = MLPProblem(
            shards=shards, num_classes=10, hidden=config.hidden,
            noise_sigma=config.noise_sigma,
        )
        return problem, test
    centers = 2.0 * rng.standard_normal((config.num_classes, config.dim))
    features, labels = _synthetic_blobs(centers, config.examples_per_class, rng)
    test = _synthetic_blobs(
        centers, config.test_examples_per_class, substream(master_seed, "dataset-test")
    )
    shards = split_dataset(features, labels, config.n, config.split_mode, rng)
    if config.problem == "logistic":
        problem = LogisticProblem(
            shards=shards, num_classes=config.num_classes,
            noise_sigma=config.noise_sigma,
        )
    else:
        problem = MLPProblem(
            shards=shards, num_classes=config.num_classes, hidden=config.hidden,
            noise_sigma=config.noise_sigma,
        )
    return problem, test


def initial_model(config: RunConfig, problem: Problem, master_seed: int) -> np.ndarray:
    if isinstance(problem, MLPProblem):
        return problem.init_params(substream(master_seed, "init"))
    return np.zeros(problem.dim)


def client_distributions(config: RunConfig, speeds: list[SpeedModel]):
    """Modeled step-count distribution per client (used for alpha and theory)."""
    if config.fixed_step_count is not None:
        return [
            StepCountDistribution.point_mass(config.fixed_step_count, config.max_steps)
            for _ in speeds
        ]
    return [clipped_geometric(sp.lam, config.max_steps) for sp in speeds]


def _catch_up(
    client: ClientState, steps: int, problem: Problem, eta: float,
    rng: np.random.Generator,
) -> ClientState:
    """Materialize a client's local training since its last contact."""
    for _ in range(min(steps, client.max_steps - client.q)):
        client = client_local_step(client, problem, eta, rng)
    return client


def run_experiment(config: RunConfig, problem: Problem | None = None) -> ProtocolRun:
    """Drive one full experiment and collect metrics every round."""
    config = config.validate()
    test = None
    if problem is None:
        problem, test = build_problem(config, config.seed)
    speeds = assign_speeds(config.n, config.fast_fraction, substream(config.seed, "speeds"))
    w0 = initial_model(config, problem, config.seed)
    ledger = ClockLedger(
        server_wait=config.server_wait, server_interact=config.server_interact
    )
    if config.method == "fedbuff":
        return _run_fedbuff(config, problem, test, speeds, w0, ledger)
    return _run_contact_methods(config, problem, test, speeds, w0, ledger)


def _within_budget(config: RunConfig, ledger: ClockLedger, t: int, next_duration: float) -> bool:
    if config.rounds is not None:
        return t < config.rounds
    return ledger.now + next_duration <= config.time_budget


def _maybe_record(records, config, problem, test, t, sim_time, server_w, client_ws,
                  force=False):
    if force or t % config.eval_stride == 0:
        if records and records[-1].t == t:
            return
        records.append(
            metrics_mod.evaluate(problem, test, t, sim_time, server_w, client_ws)
        )


def _run_contact_methods(config, problem, test, speeds, w0, ledger):
    seed = config.seed
    n, s, K = config.n, config.s, config.max_steps
    dists = client_distributions(config, speeds)
    srv = ServerState(w=w0.copy(), t=0, s=s, eta=config.eta)
    clients = [
        fresh_client(i, w0, config.reweight, dists[i], speeds[i]) for i in range(n)
    ]
    last_contact = np.zeros(n)
    # In time mode the realized step counts follow the renewal process over
    # each client's contact window, not the modeled distribution, so the
    # reweighting divisor is calibrated from each client's own history.
    calibrate = config.step_count_mode == "time" and config.fixed_step_count is None
    observed_counts: list[list[int]] = [[] for _ in range(n)]
    records: list = []
    trace: list = []

    def anchors() -> np.ndarray:
        if config.method == "fedavg":
            return np.tile(srv.w, (n, 1))
        return np.stack([c.w_local for c in clients])

    _maybe_record(records, config, problem, test, 0, 0.0, srv.w, anchors())
    t = 0
    while True:
        selected = sample_selection(n, s, substream(seed, "select", t + 1))
        if config.method == "fedavg":
            duration = round_duration(
                "fedavg", ledger, [speeds[i] for i in selected],
                substream(seed, "fedavg-step", t + 1), max_steps=K,
            )
        else:
            duration = ledger.server_interact + ledger.server_wait
        if not _within_budget(config, ledger, t, duration):
            break
        t += 1
        t_end = ledger.now + duration
        if config.method == "fedavg":
            srv = fedavg_round(
                srv, selected, problem, config.eta, K, substream(seed, "grad", t)
            )
            trace.append(
                {
                    "t": t, "sim_time": t_end, "selected": selected,
                    "q_at_contact": [K] * s,
                    "payload_norms": [float(np.linalg.norm(srv.w))],
                }
            )
        else:
            contacted = []
            for i in selected:
                if config.fixed_step_count is not None:
                    steps = config.fixed_step_count
                elif config.step_count_mode == "direct":
                    steps = int(dists[i].sample(substream(seed, "elapse", t, i)))
                else:
                    window = t_end - last_contact[i]
                    steps = elapse_steps(
                        speeds[i], window, K, substream(seed, "elapse", t, i)
                    )
                c = _catch_up(clients[i], steps, problem, config.eta,
                              substream(seed, "grad", t, i))
                if calibrate:
                    emp = StepCountDistribution.empirical(
                        np.array(observed_counts[i], dtype=int), K
                    )
                    c = replace(c, dist=emp)
                    observed_counts[i].append(c.q)
                contacted.append(c)
                last_contact[i] = t_end
            if config.method == "favano":
                if config.force_alpha_one:
                    payloads = [c.w_local.copy() for c in contacted]
                else:
                    payloads = [favano_payload(c) for c in contacted]
                if config.server_mean_only:
                    srv = replace(srv, w=sum(payloads) / len(payloads), t=srv.t + 1)
                else:
                    srv = favano_server_round(srv, payloads)
                for c in contacted:
                    clients[c.cid] = reset_client(c, srv.w)
                norms = [float(np.linalg.norm(p)) for p in payloads]
            else:  # quafl
                srv, updated = quafl_round(srv, contacted)
                for c in updated:
                    clients[c.cid] = c
                norms = [float(np.linalg.norm(c.w_local)) for c in contacted]
            trace.append(
                {
                    "t": t, "sim_time": t_end, "selected": selected,
                    "q_at_contact": [c.q for c in contacted],
                    "payload_norms": norms,
                }
            )
        ledger.advance(duration)
        _maybe_record(records, config, problem, test, t, ledger.now, srv.w, anchors())
    _maybe_record(records, config, problem, test, t, ledger.now, srv.w, anchors(),
                  force=True)
    return ProtocolRun(
        config=config, records=records, trace=trace, server_w=srv.w,
        client_ws=anchors(), speed_labels=[sp.label for sp in speeds],
    )


def _cycle_duration(seed: int, cid: int, k: int, speed: SpeedModel, steps: int) -> float:
    rng = substream(seed, "fedbuff-time", cid, k)
    return float(sum(speed.sample_step_time(rng) for _ in range(steps)))


def _run_fedbuff(config, problem, test, speeds, w0, ledger):
    """Buffered asynchronous training.

    Every client runs K-step training cycles back to back; completions feed
    the buffer in (arrival time, client id) order.  The submitted delta is
    anchor minus trained model, so w <- w - eta_server * mean(delta)
    descends; a client restarts from the server model current at its
    arrival, which may be stale by the time the buffer flushes.
    """
    seed = config.seed
    n, K, Z = config.n, config.max_steps, config.buffer_capacity
    state = FedBuffState(w=w0.copy(), capacity=Z, buffer=[])
    anchors = np.tile(w0, (n, 1))
    cycle = np.zeros(n, dtype=int)
    heap: list[tuple[float, int]] = []
    for i in range(n):
        heapq.heappush(heap, (_cycle_duration(seed, i, 0, speeds[i], K), i))
    records: list = []
    trace: list = []
    _maybe_record(records, config, problem, test, 0, 0.0, state.w, anchors)
    t = 0
    while True:
        round_start = ledger.now
        arrivals = []
        for _ in range(Z):
            at, cid = heapq.heappop(heap)
            arrivals.append((at, cid))
            nxt = at + _cycle_duration(seed, cid, cycle[cid] + 1 + sum(
                1 for a in arrivals[:-1] if a[1] == cid), speeds[cid], K)
            heapq.heappush(heap, (nxt, cid))
        duration = ledger.server_interact + max(arrivals[-1][0] - round_start, 0.0)
        if not _within_budget(config, ledger, t, duration):
            break
        t += 1
        delta_norms = []
        for at, cid in arrivals:
            grad_rng = substream(seed, "grad", cid, cycle[cid])
            w = anchors[cid].copy()
            for _ in range(K):
                w = w - config.eta * problem.stochastic_gradient(cid, w, grad_rng)
            delta = anchors[cid] - w
            delta_norms.append(float(np.linalg.norm(delta)))
            state = fedbuff_step(state, delta, config.eta_server)
            cycle[cid] += 1
            anchors[cid] = state.w.copy()
        ledger.advance(duration)
        trace.append(
            {
                "t": t, "sim_time": ledger.now,
                "selected": [cid for _, cid in arrivals],
                "q_at_contact": [K] * Z,
                "payload_norms": delta_norms,
            }
        )
        _maybe_record(records, config, problem, test, t, ledger.now, state.w, anchors)
    _maybe_record(records, config, problem, test, t, ledger.now, state.w, anchors,
                  force=True)
    return ProtocolRun(
        config=config, records=records, trace=trace, server_w=state.w,
        client_ws=anchors, speed_labels=[sp.label for sp in speeds],
    )
