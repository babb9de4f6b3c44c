import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from postnet import autograd as ag
from postnet.flows import (
    ClassDensitySet,
    MoGDensity,
    RadialFlowStack,
    class_densities,
    flow_sample,
    mog_log_density,
    radial_log_density,
)

from conftest import numeric_grad, rel_err


def grid_mass(log_density_fn, lo=-8.0, hi=8.0, step=0.02):
    g = np.arange(lo, hi + step / 2, step)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    dens = np.exp(log_density_fn(pts)).reshape(len(g), len(g))
    return trapezoid(trapezoid(dens, g, axis=1), g)


def _random_stack(seed, dim=2, length=4, spread=1.5):
    rng = np.random.default_rng(seed)
    stack = RadialFlowStack.create(dim, length, rng)
    # push the layers away from the near-identity initialisation
    for layer in stack.layers:
        layer.center.data = rng.normal(size=dim) * spread
        layer.alpha_raw.data = np.asarray(rng.normal())
        layer.beta_raw.data = np.asarray(rng.normal() * 2)
    return stack


class TestRadialDensity:
    def test_empty_stack_is_standard_normal(self):
        stack = RadialFlowStack([], 2)
        assert radial_log_density(stack, np.zeros((1, 2))).data[0] == pytest.approx(-math.log(2 * math.pi))

    def test_zero_beta_is_identity(self, rng):
        stack = _random_stack(1, length=3)
        for layer in stack.layers:
            layer.beta_raw.data = layer.alpha_raw.data.copy()
        z = rng.normal(size=(20, 2)) * 3
        base = -0.5 * np.sum(z * z, axis=1) - math.log(2 * math.pi)
        np.testing.assert_allclose(stack.log_density(z).data, base, rtol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_integrates_to_one(self, seed):
        stack = _random_stack(seed)
        assert grid_mass(lambda p: stack.log_density(p).data) == pytest.approx(1.0, abs=0.02)

    def test_log_det_matches_numerical_jacobian(self, rng):
        stack = _random_stack(5, dim=3, length=1)
        layer = stack.layers[0]
        z = rng.normal(size=(4, 3))
        _, log_det = layer.forward(ag.tensor(z))
        h = 1e-6
        for i in range(4):
            jac = np.zeros((3, 3))
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                up = layer.forward_numpy((z[i] + e)[None])[0]
                down = layer.forward_numpy((z[i] - e)[None])[0]
                jac[:, j] = (up - down) / (2 * h)
            assert log_det.data[i] == pytest.approx(np.log(abs(np.linalg.det(jac))), abs=1e-6)

    def test_inverse_round_trip(self, rng):
        stack = _random_stack(7, dim=4, length=5)
        z = rng.normal(size=(50, 4)) * 2
        np.testing.assert_allclose(stack.to_base(flow_sample_inverse(stack, z)), z, atol=1e-9)

    def test_parameter_gradients(self, rng):
        stack = _random_stack(3, length=2)
        z = rng.normal(size=(6, 2))
        params = stack.parameters()
        ag.sum(stack.log_density(z)).backward()
        for p in params:
            numeric = numeric_grad(lambda: stack.log_density(z).data.sum(), p)
            assert rel_err(p.grad, numeric) < 1e-6

    def test_parameter_count(self):
        assert RadialFlowStack.create(6, 6).num_parameters() == 6 * (6 + 2)

    def test_round_trip_dict(self, rng):
        stack = _random_stack(11)
        again = RadialFlowStack.from_dict(stack.to_dict())
        z = rng.normal(size=(5, 2))
        assert stack.log_density(z).data.tobytes() == again.log_density(z).data.tobytes()


def flow_sample_inverse(stack, z):
    out = z
    for layer in reversed(stack.layers):
        out = layer.inverse_numpy(out)
    return out


class TestSampling:
    def test_identity_flow_samples_standard_normal(self):
        stack = RadialFlowStack([], 2)
        s = flow_sample(stack, 100_000, seed=3)
        assert np.all(np.abs(s.mean(axis=0)) < 3 / math.sqrt(100_000))

    def test_same_seed_same_samples(self):
        stack = _random_stack(2)
        assert flow_sample(stack, 10, 4).tobytes() == flow_sample(stack, 10, 4).tobytes()

    def test_single_sample_shape(self):
        assert flow_sample(_random_stack(2), 1, 0).shape == (1, 2)

    def test_samples_follow_the_density(self):
        # samples pulled back to the base space must be standard normal
        stack = _random_stack(9)
        s = flow_sample(stack, 50_000, seed=1)
        base = stack.to_base(s)
        assert np.all(np.abs(base.mean(axis=0)) < 4 / math.sqrt(50_000))
        np.testing.assert_allclose(np.cov(base.T), np.eye(2), atol=0.03)


class TestMoG:
    def test_single_component_standard_normal(self):
        mog = MoGDensity(ag.parameter([0.0]), ag.parameter([[0.0, 0.0]]), ag.parameter([[0.0, 0.0]]))
        assert mog_log_density(mog, np.zeros((1, 2))).data[0] == pytest.approx(-math.log(2 * math.pi))

    def test_duplicate_components(self, rng):
        one = MoGDensity(ag.parameter([0.0]), ag.parameter([[1.0, -1.0]]), ag.parameter([[0.3, -0.2]]))
        two = MoGDensity(
            ag.parameter([0.7, -0.4]), ag.parameter([[1.0, -1.0]] * 2), ag.parameter([[0.3, -0.2]] * 2)
        )
        z = rng.normal(size=(8, 2))
        np.testing.assert_allclose(one.log_density(z).data, two.log_density(z).data, rtol=1e-12)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(4)
        mog = MoGDensity.create(2, 3, rng)
        mog.means.data = rng.normal(size=(3, 2)) * 2
        mog.log_vars.data = rng.normal(size=(3, 2)) * 0.5
        assert grid_mass(lambda p: mog.log_density(p).data) == pytest.approx(1.0, abs=0.02)

    def test_gradients(self, rng):
        mog = MoGDensity.create(2, 3, rng)
        z = rng.normal(size=(5, 2))
        ag.sum(mog.log_density(z)).backward()
        for p in mog.parameters():
            numeric = numeric_grad(lambda: mog.log_density(z).data.sum(), p)
            assert rel_err(p.grad, numeric) < 1e-6


class TestClassDensities:
    def test_single_class(self, rng):
        cds = ClassDensitySet.create(1, 2, seed=0)
        z = rng.normal(size=(4, 2))
        np.testing.assert_array_equal(cds.log_densities(z).data[:, 0], cds.densities[0].log_density(z).data)

    def test_far_field_is_negligible(self):
        cds = ClassDensitySet.create(3, 2, seed=0)
        z = np.array([[50.0, 0.0], [0.0, -50.0], [35.0, 35.0]])
        assert np.all(class_densities(cds, z) < 1e-100)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.integers(1, 4), kind=st.sampled_from(["radial", "mog"]))
    def test_non_negative(self, seed, k, kind):
        cds = ClassDensitySet.create(k, 3, kind, flow_length=3, seed=seed)
        z = np.random.default_rng(seed).normal(size=(10, 3)) * 5
        d = class_densities(cds, z)
        assert d.shape == (10, k) and np.all(d >= 0)

    def test_wrong_latent_width(self):
        with pytest.raises(ag.ShapeError):
            ClassDensitySet.create(2, 3, seed=0).log_densities(np.zeros((2, 2)))
