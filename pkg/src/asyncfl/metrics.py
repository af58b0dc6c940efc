"""Evaluation records, the network potential, and CSV/manifest output.

The potential tracks how far the server and client models have spread from
their common mean; the contraction check verifies the one-round drift
inequality by Monte Carlo.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .problems import Problem, check_same_dim, check_vector

CSV_COLUMNS = (
    "t",
    "sim_time",
    "f_mu",
    "grad_norm_sq",
    "phi",
    "test_loss",
    "test_acc",
    "model_variance",
)


@dataclass
class MetricsRecord:
    """One evaluation row: optimization metrics, plus test metrics if a
    held-out set was provided."""

    t: int
    sim_time: float
    f_mu: float
    grad_norm_sq: float
    phi: float
    test_loss: float | None = None
    test_acc: float | None = None
    model_variance: float = 0.0


def mean_model(server_w: np.ndarray, client_ws: np.ndarray) -> np.ndarray:
    """Network mean mu = (w_server + sum_i w_i) / (n + 1)."""
    server_w = check_vector(server_w)
    client_ws = np.asarray(client_ws, dtype=np.float64)
    if client_ws.ndim != 2:
        raise ValueError("client_ws must have shape (n, dim)")
    check_same_dim(server_w, client_ws[0])
    return (server_w + client_ws.sum(axis=0)) / (client_ws.shape[0] + 1)


def potential(server_w: np.ndarray, client_ws: np.ndarray) -> float:
    """Phi = ||w - mu||^2 + sum_i ||w_i - mu||^2, with mu the network mean."""
    mu = mean_model(server_w, client_ws)
    val = float(np.sum((server_w - mu) ** 2))
    val += float(np.sum((np.asarray(client_ws) - mu) ** 2))
    return val


def model_variance(server_w: np.ndarray, client_ws: np.ndarray) -> float:
    """Dispersion of client models around the server model."""
    server_w = check_vector(server_w)
    return float(np.sum((np.asarray(client_ws) - server_w) ** 2))


def evaluate(
    problem: Problem,
    test,
    t: int,
    sim_time: float,
    server_w: np.ndarray,
    client_ws: np.ndarray,
) -> MetricsRecord:
    """Evaluate the network mean model against the training objective and,
    when a (features, labels) test pair is given, a held-out set."""
    mu = mean_model(server_w, client_ws)
    g = problem.grad(mu)
    rec = MetricsRecord(
        t=t,
        sim_time=float(sim_time),
        f_mu=problem.loss(mu),
        grad_norm_sq=float(np.dot(g, g)),
        phi=potential(server_w, client_ws),
        model_variance=model_variance(server_w, client_ws),
    )
    if test is not None:
        features, labels = test
        rec.test_loss = problem.test_loss(mu, features, labels)
        rec.test_acc = problem.accuracy(mu, features, labels)
    return rec


def contraction_rate(n: int, s: int) -> float:
    """One-round contraction factor kappa = s(n-s) / (2 n (n+1) (s+1))."""
    if not 1 <= s <= n:
        raise ValueError(f"need 1 <= s <= n, got s={s}, n={n}")
    return s * (n - s) / (2.0 * n * (n + 1) * (s + 1))


@dataclass
class ContractionReport:
    """Outcome of the one-round potential drift check."""

    lhs_mean: float
    lhs_stderr: float
    rhs: float
    trials: int

    def holds(self, num_stderr: float = 3.0) -> bool:
        return self.lhs_mean <= self.rhs + num_stderr * self.lhs_stderr


def check_potential_contraction(
    server_w: np.ndarray,
    client_ws: np.ndarray,
    dists,
    mode: str,
    s: int,
    eta: float,
    problem: Problem,
    trials: int,
    rng: np.random.Generator,
) -> ContractionReport:
    """Monte Carlo check of the one-round potential drift inequality.

    Simulates ``trials`` independent rounds from the given network state and
    estimates the left side of

        E[Phi'] - 3 (s^2/n) eta^2 sum_i E||h_i||^2  <=  (1 - kappa) Phi

    where Phi' is the potential after one round, h_i is the reweighted
    per-step progress direction of client i, and kappa the contraction
    rate.  The caller decides the tolerance in standard errors.
    """
    from .reweighting import DETERMINISTIC

    server_w = check_vector(server_w)
    client_ws = np.asarray(client_ws, dtype=np.float64)
    n = client_ws.shape[0]
    kappa = contraction_rate(n, s)
    phi0 = potential(server_w, client_ws)
    deterministic = mode == DETERMINISTIC

    # presample selections and per-client step counts; the trial loop below
    # only touches the s selected rows, with the potential folded
    # incrementally from the fixed remainder
    selections = np.argsort(rng.random((trials, n)), axis=1)[:, :s]
    counts = np.stack([d.sample(rng, size=trials) for d in dists])
    sum_vec = server_w + client_ws.sum(axis=0)
    sum_sq = float(np.dot(server_w, server_w) + np.sum(client_ws**2))
    client_sq = np.sum(client_ws**2, axis=1)

    samples = np.empty(trials)
    for trial in range(trials):
        selected = selections[trial]
        payload_sum = np.zeros_like(server_w)
        correction = 0.0
        for i in selected:
            anchor = client_ws[i]
            w = anchor
            steps = int(counts[i, trial])
            for _ in range(steps):
                w = w - eta * problem._noisy_grad(int(i), w, rng)
            progress = w - anchor
            if deterministic:
                a = dists[i].m1
            elif steps > 0:
                a = dists[i].p_pos * steps
            else:
                payload_sum += anchor
                continue
            payload_sum += anchor + progress / a
            if eta > 0:
                correction += float(np.dot(progress, progress)) / (a * eta) ** 2
        new_server = (server_w + payload_sum) / (s + 1)
        # the s selected clients and the server all move to new_server
        new_sum_vec = sum_vec - server_w - client_ws[selected].sum(axis=0) \
            + (s + 1) * new_server
        new_sum_sq = sum_sq - float(np.dot(server_w, server_w)) \
            - float(client_sq[selected].sum()) \
            + (s + 1) * float(np.dot(new_server, new_server))
        mu = new_sum_vec / (n + 1)
        phi1 = new_sum_sq - (n + 1) * float(np.dot(mu, mu))
        samples[trial] = phi1 - 3.0 * (s * s / n) * eta * eta * correction
    lhs = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(trials))
    rhs = (1.0 - kappa) * phi0
    return ContractionReport(lhs_mean=lhs, lhs_stderr=stderr, rhs=rhs, trials=trials)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.10g" % value


def write_metrics(path, records: list[MetricsRecord]) -> None:
    """Write evaluation rows as CSV; numeric fields use %.10g so output is
    byte-stable across runs."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            row = asdict(rec)
            writer.writerow([_fmt(row[col]) for col in CSV_COLUMNS])


def read_metrics(path) -> list[MetricsRecord]:
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(
                MetricsRecord(
                    t=int(row["t"]),
                    sim_time=float(row["sim_time"]),
                    f_mu=float(row["f_mu"]),
                    grad_norm_sq=float(row["grad_norm_sq"]),
                    phi=float(row["phi"]),
                    test_loss=float(row["test_loss"]) if row["test_loss"] else None,
                    test_acc=float(row["test_acc"]) if row["test_acc"] else None,
                    model_variance=float(row["model_variance"]),
                )
            )
    return records


def metrics_to_csv_text(records: list[MetricsRecord]) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\r\n")
    for rec in records:
        row = asdict(rec)
        buf.write(",".join(_fmt(row[col]) for col in CSV_COLUMNS) + "\r\n")
    return buf.getvalue()


def run_manifest(config, package_version: str) -> str:
    """JSON echo of the configuration that produced an artifact."""
    payload = {"version": package_version, "config": asdict(config)}
    return json.dumps(payload, indent=2, sort_keys=True)
