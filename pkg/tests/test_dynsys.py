import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netinfer.dynsys import (SYSTEMS, DiffusiveCoupling, OscillatorModel, chua, eval_g,
                             fitzhugh_nagumo, lorenz, make_model, stack_models)
from netinfer.errors import ConfigError, NumericError


def fd_jacobian(f, x, h=1e-6):
    J = np.empty(x.shape + (x.shape[-1],))
    for d in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[d] = h
        J[..., d] = (f(x + e) - f(x - e)) / (2 * h)
    return J


@pytest.mark.parametrize("model", [lorenz(), chua(), fitzhugh_nagumo()], ids=["lorenz", "chua", "fhn"])
def test_jacobian_matches_central_differences(model):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, model.state_dim)) * 3
    J = model.jacobian(x)
    assert np.allclose(J, fd_jacobian(model.f, x), rtol=1e-6, atol=1e-6)


def test_lorenz_values_by_hand():
    m = lorenz()
    assert m.params["gamma"] == 10 and m.params["rho"] == 28
    assert np.isclose(m.params["beta"], 8 / 3)
    # (1, 2, 3): [10 * (2 - 1), 1 * (28 - 3) - 2, 1 * 2 - 8]
    assert np.allclose(m.f(np.array([1.0, 2.0, 3.0])), [10.0, 23.0, 2.0 - 8.0])


def test_fhn_observed_and_coupled_components():
    m = fitzhugh_nagumo()
    assert m.state_dim == 4 and m.dim == 3 and m.coupled_component == 0
    # harmonic drive: d/dt (I, dI) = (dI, -w^2 I)
    out = m.f(np.array([0.0, 0.0, 0.5, 0.2]))
    assert np.allclose(out[2:], [0.2, -m.params["omega"] ** 2 * 0.5])


def test_missing_or_unknown_parameters():
    with pytest.raises(ConfigError):
        OscillatorModel("lorenz", {"gamma": 10.0})
    with pytest.raises(ConfigError):
        make_model("lorenz", sigma=1.0)
    with pytest.raises(ConfigError):
        make_model("duffing")


def test_non_finite_state_raises():
    with pytest.raises(NumericError):
        lorenz().f(np.array([np.nan, 0.0, 0.0]))


def test_stack_models_per_node_parameters():
    a = chua()
    b = a.with_params(alpha=17.3)
    x = np.random.default_rng(1).normal(size=(2, 3))
    stacked = stack_models([a, b])
    assert np.allclose(stacked.f(x), np.stack([a.f(x[0]), b.f(x[1])]))
    same = stack_models([a, a])
    assert np.ndim(same.params["alpha"]) == 0


def test_stack_models_rejects_mixed_kinds():
    with pytest.raises(ConfigError):
        stack_models([lorenz(), chua()])


def test_diffusive_coupling_g_and_partials():
    g = DiffusiveCoupling(0)
    xi, xj = np.array([1.0, 2.0, 3.0]), np.array([4.0, -1.0, 0.5])
    assert np.allclose(g.g(xi, xj), [3.0, 0.0, 0.0])
    assert np.allclose(eval_g(g, xi, xj), [3.0, 0.0, 0.0])
    di, dj = g.partials(3)
    assert np.allclose(di, np.diag([-1.0, 0, 0])) and np.allclose(dj, np.diag([1.0, 0, 0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_network_term_matches_pairwise_sum(n, seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(n, n))
    np.fill_diagonal(C, 0)
    X = rng.normal(size=(n, 3))
    g = DiffusiveCoupling(1)
    ref = np.zeros_like(X)
    for i in range(n):
        for j in range(n):
            ref[i] += C[i, j] * g.g(X[i], X[j])
    assert np.allclose(g.network_term(C, X), ref, atol=1e-12)


def test_registry_contains_three_systems():
    assert {"lorenz", "chua", "fhn"} <= set(SYSTEMS)
