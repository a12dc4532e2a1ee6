import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatpoint.geometry import ConfigurationError
from heatpoint.prior import CovarianceSpec, build_prior, pcn_propose, sample_prior


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        CovarianceSpec(variance=0.0)
    with pytest.raises(ConfigurationError):
        CovarianceSpec(length_scale=-1.0)
    with pytest.raises(ConfigurationError):
        CovarianceSpec(nugget=-1e-9)


def test_kernel_values():
    spec = CovarianceSpec(variance=2.0, length_scale=0.5)
    k = spec.kernel(np.array([[0.0, 0.0]]), np.array([[0.0, 0.0], [0.5, 0.0], [0.3, 0.4]]))
    np.testing.assert_allclose(k, [[2.0, 2.0 * np.exp(-0.5), 2.0 * np.exp(-0.5)]], rtol=1e-15)


def test_cholesky_identity(mesh):
    spec = CovarianceSpec()
    prior = build_prior(mesh, spec, 0)
    target = prior.covariance + spec.nugget * np.eye(prior.dim)
    resid = np.linalg.norm(prior.factor @ prior.factor.T - target) / np.linalg.norm(prior.covariance)
    assert resid < 1e-10
    assert prior.dim == 225


def test_vanishing_length_scale_gives_independent_nodes(mesh):
    prior = build_prior(mesh, CovarianceSpec(variance=1.0, length_scale=1e-6), 1)
    np.testing.assert_allclose(prior.covariance, np.eye(225), atol=1e-300)
    x = prior.draw(10_000)
    corr = np.corrcoef(x[:, :20].T)
    off = corr[~np.eye(20, dtype=bool)]
    assert np.max(np.abs(off)) < 0.05


def test_default_prior_variance_monte_carlo(mesh):
    prior = build_prior(mesh, CovarianceSpec(), 2)
    x = prior.draw(10_000)
    var = x.var(axis=0)
    assert np.all(np.abs(var - 1.0) < 0.05)
    # mean within the CLT bound
    assert np.all(np.abs(x.mean(axis=0)) < 4 / np.sqrt(10_000))


def test_nearby_covariance_matches_kernel(mesh):
    spec = CovarianceSpec()
    prior = build_prior(mesh, spec, 3)
    x = prior.draw(10_000)
    i = mesh.index_of((0.0, 0.0))
    j = mesh.index_of((0.125, 0.0))
    emp = np.mean(x[:, i] * x[:, j])
    assert emp == pytest.approx(spec.kernel(mesh.nodes[i], mesh.nodes[j])[0, 0], rel=0.1)


def test_seeded_draws_are_bit_identical(mesh):
    a = sample_prior(build_prior(mesh, CovarianceSpec(), 42))
    b = sample_prior(build_prior(mesh, CovarianceSpec(), 42))
    assert a.tobytes() == b.tobytes()


def test_beta_one_is_fresh_draw(mesh):
    p1 = build_prior(mesh, CovarianceSpec(), 5)
    p2 = build_prior(mesh, CovarianceSpec(), 5)
    current = np.full(225, 100.0)
    np.testing.assert_allclose(pcn_propose(current, 1.0, p1), p2.draw(), rtol=1e-15)


def test_tiny_beta_keeps_current(mesh):
    prior = build_prior(mesh, CovarianceSpec(), 6)
    current = prior.draw()
    assert np.max(np.abs(pcn_propose(current, 1e-12, prior) - current)) < 1e-10


def test_beta_out_of_range(mesh):
    prior = build_prior(mesh, CovarianceSpec(), 7)
    for beta in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigurationError):
            pcn_propose(np.zeros(225), beta, prior)


def test_proposal_preserves_prior_marginal(mesh):
    prior = build_prior(mesh, CovarianceSpec(), 8)
    current = prior.draw(10_000)
    z = prior.draw(10_000)
    beta = 0.3
    prop = np.sqrt(1 - beta**2) * current + beta * z
    assert np.all(np.abs(prop.var(axis=0) - 1.0) < 0.06)


@settings(max_examples=25, deadline=None)
@given(beta=st.floats(1e-6, 1.0), scale=st.floats(-5, 5))
def test_proposal_is_affine_in_current(beta, scale):
    from heatpoint.geometry import Domain, build_mesh

    mesh = build_mesh(Domain(1.0), 0.5)
    p1 = build_prior(mesh, CovarianceSpec(), 9)
    p2 = build_prior(mesh, CovarianceSpec(), 9)
    cur = np.linspace(-1, 1, 9)
    a = pcn_propose(scale * cur, beta, p1)
    b = pcn_propose(np.zeros(9), beta, p2)
    np.testing.assert_allclose(a - b, np.sqrt(1 - beta**2) * scale * cur, atol=1e-12)
