"""Round semantics for the four protocols: payloads, resets, aggregation."""

import numpy as np
import pytest

from asyncfl.errors import DimensionMismatchError
from asyncfl.problems import QuadraticProblem
from asyncfl.protocols import (
    ClientState,
    FedBuffState,
    ServerState,
    client_local_step,
    favano_client_contact,
    favano_payload,
    favano_server_round,
    fedavg_round,
    fedbuff_step,
    fresh_client,
    quafl_round,
    reset_client,
)
from asyncfl.reweighting import (
    DETERMINISTIC,
    STOCHASTIC,
    StepCountDistribution,
    clipped_geometric,
)
from asyncfl.rng import substream


def make_problem(dim=3, n=4, seed=0, noise=0.0):
    rng = substream(seed, "prob")
    return QuadraticProblem(centers=rng.standard_normal((n, dim)), noise_sigma=noise)


def make_client(w0, mode=DETERMINISTIC, k=5, lam=0.5):
    return fresh_client(0, w0, mode, clipped_geometric(lam, k))


def test_fresh_client_copies_model():
    w0 = np.zeros(3)
    c = make_client(w0)
    c.w_local[0] = 5.0
    assert w0[0] == 0.0
    assert c.q == 0


def test_client_state_rejects_out_of_range_counter():
    with pytest.raises(ValueError):
        ClientState(
            cid=0, w_local=np.zeros(2), w_init=np.zeros(2), q=9,
            mode=DETERMINISTIC, dist=clipped_geometric(0.5, 5),
        )


def test_local_step_decreases_quadratic_loss():
    problem = make_problem()
    c = make_client(np.zeros(3))
    rng = substream(1, "step")
    before = problem.client_loss(0, c.w_local)
    c = client_local_step(c, problem, 0.1, rng)
    assert c.q == 1
    assert problem.client_loss(0, c.w_local) < before


def test_local_step_rejected_at_cap():
    problem = make_problem()
    c = make_client(np.zeros(3), k=2)
    rng = substream(2, "step")
    c = client_local_step(c, problem, 0.1, rng)
    c = client_local_step(c, problem, 0.1, rng)
    with pytest.raises(ValueError):
        client_local_step(c, problem, 0.1, rng)


def test_payload_point_mass_deterministic_example():
    k = 5
    c = fresh_client(0, np.zeros(2), DETERMINISTIC, StepCountDistribution.point_mass(k, k))
    problem = make_problem(dim=2)
    rng = substream(3, "step")
    for _ in range(k):
        c = client_local_step(c, problem, 0.05, rng)
    payload = favano_payload(c)
    expected = c.w_init + (c.w_local - c.w_init) / k
    assert np.allclose(payload, expected, atol=1e-15)


def test_payload_stochastic_scales_with_realized_count():
    dist = clipped_geometric(0.5, 6)
    c = fresh_client(0, np.zeros(2), STOCHASTIC, dist)
    problem = make_problem(dim=2)
    rng = substream(4, "step")
    c = client_local_step(c, problem, 0.05, rng)
    c = client_local_step(c, problem, 0.05, rng)
    payload = favano_payload(c)
    expected = c.w_init + (c.w_local - c.w_init) / (dist.p_pos * 2)
    assert np.allclose(payload, expected, atol=1e-15)


def test_payload_zero_steps_stochastic_returns_anchor():
    c = fresh_client(0, np.ones(2), STOCHASTIC, clipped_geometric(0.5, 6))
    assert np.array_equal(favano_payload(c), np.ones(2))


def test_reset_adopts_server_model():
    c = make_client(np.zeros(3))
    problem = make_problem()
    rng = substream(5, "step")
    c = client_local_step(c, problem, 0.1, rng)
    w_server = np.array([1.0, 2.0, 3.0])
    c = reset_client(c, w_server)
    assert np.array_equal(c.w_local, w_server)
    assert np.array_equal(c.w_init, w_server)
    assert c.q == 0


def test_contact_emits_payload_then_resets():
    c = make_client(np.zeros(3))
    problem = make_problem()
    rng = substream(6, "step")
    c = client_local_step(c, problem, 0.1, rng)
    payload, c2 = favano_client_contact(c, np.ones(3))
    assert np.allclose(payload, favano_payload(c))
    assert np.array_equal(c2.w_local, np.ones(3))
    assert c2.q == 0


def test_server_round_convex_combination():
    srv = ServerState(w=np.zeros(1), t=0, s=1, eta=0.1)
    srv = favano_server_round(srv, [np.array([2.0])])
    assert srv.w == pytest.approx(np.array([1.0]))
    assert srv.t == 1


def test_server_round_requires_s_payloads():
    srv = ServerState(w=np.zeros(1), t=0, s=2, eta=0.1)
    with pytest.raises(ValueError):
        favano_server_round(srv, [np.zeros(1)])


def test_server_round_dimension_mismatch():
    srv = ServerState(w=np.zeros(2), t=0, s=1, eta=0.1)
    with pytest.raises(DimensionMismatchError):
        favano_server_round(srv, [np.zeros(3)])


def test_quafl_round_worked_example():
    srv = ServerState(w=np.zeros(1), t=0, s=1, eta=0.1)
    c = make_client(np.array([2.0]))
    srv2, clients = quafl_round(srv, [c])
    assert srv2.w == pytest.approx(np.array([1.0]))
    assert clients[0].w_local == pytest.approx(np.array([1.0]))
    assert clients[0].q == 0


def test_quafl_client_keeps_heavy_own_weight():
    # the local model enters the client update with coefficient s/(s+1)
    s = 9
    srv = ServerState(w=np.zeros(1), t=0, s=s, eta=0.1)
    clients = [make_client(np.array([1.0])) for _ in range(s)]
    _, updated = quafl_round(srv, clients)
    for c in updated:
        assert c.w_local == pytest.approx(np.array([s / (s + 1)]))
        assert np.array_equal(c.w_local, c.w_init)


def test_quafl_round_counts_clients():
    srv = ServerState(w=np.zeros(1), t=0, s=2, eta=0.1)
    with pytest.raises(ValueError):
        quafl_round(srv, [make_client(np.zeros(1))])


def test_fedavg_round_exact_local_steps_noise_free():
    problem = make_problem(dim=2)
    srv = ServerState(w=np.zeros(2), t=0, s=2, eta=0.1)
    rng = substream(7, "fedavg")
    srv2 = fedavg_round(srv, [0, 1], problem, 0.1, 3, rng)
    models = []
    for cid in (0, 1):
        w = np.zeros(2)
        for _ in range(3):
            w = w - 0.1 * problem.client_grad(cid, w)
        models.append(w)
    assert np.allclose(srv2.w, np.mean(models, axis=0), atol=1e-15)


def test_fedavg_round_needs_clients():
    problem = make_problem()
    srv = ServerState(w=np.zeros(3), t=0, s=0, eta=0.1)
    with pytest.raises(ValueError):
        fedavg_round(srv, [], problem, 0.1, 3, substream(8, "x"))


def test_fedbuff_accumulates_until_capacity():
    state = FedBuffState(w=np.zeros(2), capacity=3, buffer=[])
    state = fedbuff_step(state, np.array([3.0, 0.0]))
    state = fedbuff_step(state, np.array([0.0, 3.0]))
    assert len(state.buffer) == 2
    assert np.array_equal(state.w, np.zeros(2))
    state = fedbuff_step(state, np.array([3.0, 3.0]))
    assert state.buffer == []
    assert state.rounds_completed == 1
    # w <- w - mean(deltas)
    assert np.allclose(state.w, np.array([-2.0, -2.0]))


def test_fedbuff_server_step_size():
    state = FedBuffState(w=np.zeros(1), capacity=1, buffer=[])
    state = fedbuff_step(state, np.array([2.0]), eta_server=0.5)
    assert state.w == pytest.approx(np.array([-1.0]))


def test_fedbuff_rejects_bad_capacity():
    with pytest.raises(ValueError):
        FedBuffState(w=np.zeros(1), capacity=0, buffer=[])


def test_fedbuff_dimension_check():
    state = FedBuffState(w=np.zeros(2), capacity=2, buffer=[])
    with pytest.raises(DimensionMismatchError):
        fedbuff_step(state, np.zeros(3))


def test_contact_unbiasedness_monte_carlo():
    """With a frozen anchor and pure-noise gradients the mean payload
    displacement matches -eta * E[steps] * (exact gradient) in both modes."""
    dim = 2
    problem = QuadraticProblem(centers=np.zeros((1, dim)), noise_sigma=0.5)
    dist = clipped_geometric(0.5, 4)
    anchor = np.array([1.0, -1.0])
    eta = 0.01
    exact = problem.client_grad(0, anchor)
    trials = 4000
    for mode in (DETERMINISTIC, STOCHASTIC):
        rng = substream(9, "mc", mode)
        disp = np.zeros(dim)
        for _ in range(trials):
            c = fresh_client(0, anchor, mode, dist)
            steps = int(dist.sample(rng))
            for _ in range(steps):
                # freeze the anchor point so each step sees the same gradient
                g = problem.stochastic_gradient(0, anchor, rng)
                c = ClientState(cid=0, w_local=c.w_local - eta * g,
                                w_init=c.w_init, q=c.q + 1, mode=mode, dist=dist)
            payload, _ = favano_client_contact(c, anchor)
            disp += payload - anchor
        mean_disp = disp / trials
        expected = -eta * exact
        se = eta * np.sqrt((np.sum(exact**2) + 0.5**2) / trials) * 3
        assert np.linalg.norm(mean_disp - expected) < 4 * se + 1e-4
