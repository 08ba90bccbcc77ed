import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seriesrisk.kernel import (
    EPS_C,
    EPS_D,
    KernelParams,
    kernel_eval,
    kernel_grad,
    params_from_json,
    params_to_json,
)


def random_draw(rng, n_features=3):
    params = KernelParams(
        c=float(rng.uniform(0.01, 3.0)),
        d=float(rng.uniform(0.01, 3.0)),
        beta=rng.normal(size=n_features + 1),
    )
    ds = float(rng.uniform(0.0, 5.0))
    dt = float(rng.uniform(0.0, 30.0))
    dw = rng.normal(size=n_features)
    return params, ds, dt, dw


def fd_gradient(params, ds, dt, dw, h=1e-6):
    """Central finite differences over the packed (c, d, beta...) vector."""
    vec = params.as_vector()
    out = np.empty_like(vec)
    for i in range(len(vec)):
        hi, lo = vec.copy(), vec.copy()
        hi[i] += h
        lo[i] -= h
        out[i] = (
            kernel_eval(KernelParams.from_vector(hi), ds, dt, dw)
            - kernel_eval(KernelParams.from_vector(lo), ds, dt, dw)
        ) / (2 * h)
    return out


class TestKernelEval:
    def test_all_offsets_zero(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([1.0]))
        assert kernel_eval(p, 0.0, 0.0, np.empty(0)) == pytest.approx(1.0)

    def test_weighted_feature_difference(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([1.0, 2.0]))
        assert kernel_eval(p, 1.0, 1.0, np.array([0.5])) == pytest.approx(0.125)

    def test_temporal_ratio(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([1.0, -0.5]))
        dw = np.array([0.3])
        v1 = kernel_eval(p, 0.7, 1.0, dw)
        v3 = kernel_eval(p, 0.7, 3.0, dw)
        assert v3 == pytest.approx(v1 * (2.0 / 4.0) ** 2)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        p = KernelParams(c=0.8, d=1.3, beta=rng.normal(size=4))
        ds = rng.uniform(0, 3, size=10)
        dt = rng.uniform(0, 10, size=10)
        dw = rng.normal(size=(10, 3))
        vec = kernel_eval(p, ds, dt, dw)
        for i in range(10):
            assert vec[i] == pytest.approx(kernel_eval(p, ds[i], dt[i], dw[i]))

    def test_signed_values_allowed_by_default(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([-2.0]))
        assert kernel_eval(p, 1.0, 1.0, np.empty(0)) < 0

    def test_clamp_mode(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([-2.0]))
        assert kernel_eval(p, 1.0, 1.0, np.empty(0), clamp=True) == 0.0

    def test_non_finite_inputs_rejected(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([1.0]))
        with pytest.raises(ValueError):
            kernel_eval(p, np.nan, 1.0, np.empty(0))
        with pytest.raises(ValueError):
            kernel_eval(p, 1.0, np.inf, np.empty(0))
        with pytest.raises(ValueError):
            kernel_eval(p, -0.1, 1.0, np.empty(0))

    def test_feature_dimension_checked(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            kernel_eval(p, 1.0, 1.0, np.array([0.1, 0.2]))


class TestKernelGrad:
    def test_zero_numerator_kills_offset_gradients(self):
        p = KernelParams(c=0.9, d=1.7, beta=np.zeros(3))
        g = kernel_grad(p, 0.4, 2.0, np.array([0.5, -0.5]))
        denom = (2.0 + 0.9) ** 2 * (0.4 + 1.7) ** 2
        assert g[0] == 0.0 and g[1] == 0.0
        assert g[2] == pytest.approx(1.0 / denom)

    def test_hand_value_at_origin(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([1.0]))
        g = kernel_grad(p, 0.0, 0.0, np.empty(0))
        assert g[0] == pytest.approx(-2.0)
        assert g[1] == pytest.approx(-2.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            params, ds, dt, dw = random_draw(rng)
            analytic = kernel_grad(params, ds, dt, dw)
            numeric = fd_gradient(params, ds, dt, dw)
            scale = np.maximum(np.abs(numeric), 1e-8)
            assert np.max(np.abs(analytic - numeric) / scale) <= 1e-4

    def test_clamped_region_has_zero_subgradient(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([-1.0, 0.5]))
        g = kernel_grad(p, 1.0, 1.0, np.array([0.0]), clamp=True)
        np.testing.assert_array_equal(g, 0.0)

    def test_batched_grad_shape(self):
        p = KernelParams(c=1.0, d=1.0, beta=np.array([1.0, 0.3]))
        g = kernel_grad(p, np.zeros(7), np.ones(7), np.zeros((7, 1)))
        assert g.shape == (7, 4)


class TestKernelProperties:
    @given(st.floats(0.1, 5.0), st.floats(0.1, 5.0), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_decay_in_time_and_space(self, c, d, ds, dt):
        p = KernelParams(c=c, d=d, beta=np.array([2.0]))
        v = kernel_eval(p, ds, dt, np.empty(0))
        assert kernel_eval(p, ds, dt + 0.5, np.empty(0)) < v
        assert kernel_eval(p, ds + 0.5, dt, np.empty(0)) < v

    @given(st.floats(0.01, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_beta_homogeneity(self, alpha):
        base = np.array([1.0, -0.7, 0.4])
        dw = np.array([0.3, 1.2])
        v1 = kernel_eval(KernelParams(c=1.0, d=2.0, beta=base), 1.5, 4.0, dw)
        v2 = kernel_eval(KernelParams(c=1.0, d=2.0, beta=alpha * base), 1.5, 4.0, dw)
        assert v2 == pytest.approx(alpha * v1, rel=1e-9)

    def test_reduces_to_geography_free_form(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            c, d = rng.uniform(0.1, 2.0, size=2)
            b0 = rng.uniform(0.2, 3.0)
            ds, dt = rng.uniform(0, 5.0, size=2)
            p = KernelParams(c=c, d=d, beta=np.array([b0, 0.0, 0.0]))
            plain = b0 / ((dt + c) ** 2 * (ds + d) ** 2)
            assert kernel_eval(p, ds, dt, np.zeros(2)) == pytest.approx(plain, rel=1e-12)


class TestParams:
    def test_floors_enforced(self):
        with pytest.raises(ValueError):
            KernelParams(c=EPS_C / 2, d=1.0, beta=np.array([1.0]))
        with pytest.raises(ValueError):
            KernelParams(c=1.0, d=EPS_D / 2, beta=np.array([1.0]))
        KernelParams(c=EPS_C, d=EPS_D, beta=np.array([1.0]))  # boundary is legal

    def test_finite_and_nonempty(self):
        with pytest.raises(ValueError):
            KernelParams(c=np.nan, d=1.0, beta=np.array([1.0]))
        with pytest.raises(ValueError):
            KernelParams(c=1.0, d=1.0, beta=np.array([]))

    def test_feature_names_length_checked(self):
        with pytest.raises(ValueError):
            KernelParams(c=1.0, d=1.0, beta=np.array([1.0, 2.0]), feature_names=("a", "b"))

    def test_vector_roundtrip(self):
        p = KernelParams(c=0.5, d=1.5, beta=np.array([1.0, -2.0, 0.25]))
        q = KernelParams.from_vector(p.as_vector())
        assert q.c == p.c and q.d == p.d
        np.testing.assert_array_equal(q.beta, p.beta)

    def test_json_roundtrip(self):
        p = KernelParams(c=0.5, d=1.5, beta=np.array([1.0, -2.0]), feature_names=("age",))
        q = params_from_json(params_to_json(p))
        assert q.c == p.c and q.d == p.d and q.feature_names == ("age",)
        np.testing.assert_array_equal(q.beta, p.beta)
