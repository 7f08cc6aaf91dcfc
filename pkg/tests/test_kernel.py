import math

import numpy as np
import pytest
from scipy import integrate

from mrlreg import IndexMatrix
from mrlreg.kernel import (
    BandwidthConfig,
    KernelKind,
    default_bandwidths,
    kernel_deriv,
    kernel_eval,
    product_kernel,
    product_kernel_grad,
)
from mrlreg.simgen import get_study, sample_dataset


@pytest.mark.parametrize("kind", list(KernelKind))
def test_moments_match_order(kind):
    mom = [integrate.quad(lambda u, j=j: u**j * kernel_eval(kind, u), -np.inf, np.inf)[0] for j in range(5)]
    assert mom[0] == pytest.approx(1.0, abs=1e-10)
    assert abs(mom[1]) < 1e-10
    if kind is KernelKind.GAUSS2:
        assert mom[2] == pytest.approx(1.0)
    else:
        assert abs(mom[2]) < 1e-10
        assert abs(mom[4]) > 1e-3


@pytest.mark.parametrize("kind", list(KernelKind))
def test_roughness_closed_form(kind):
    val = integrate.quad(lambda u: kernel_eval(kind, u) ** 2, -np.inf, np.inf)[0]
    assert kind.roughness == pytest.approx(val, rel=1e-10)


@pytest.mark.parametrize("kind", list(KernelKind))
def test_derivative_matches_finite_difference(kind):
    u = np.linspace(-4, 4, 41)
    eps = 1e-6
    fd = (kernel_eval(kind, u + eps) - kernel_eval(kind, u - eps)) / (2 * eps)
    np.testing.assert_allclose(kernel_deriv(kind, u), fd, atol=1e-8)


def test_gauss4_takes_negative_values():
    assert kernel_eval(KernelKind.GAUSS4, 2.5) < 0


def test_product_kernel_integrates_to_one_and_gradient():
    h = np.array([0.7, 1.3])
    val = integrate.dblquad(lambda b, a: product_kernel(KernelKind.GAUSS4, np.array([a, b]), h), -12, 12, -12, 12)[0]
    assert val == pytest.approx(1.0, abs=1e-7)
    u = np.array([0.3, -0.4])
    g = product_kernel_grad(KernelKind.GAUSS4, u, h)
    eps = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        fd = (product_kernel(KernelKind.GAUSS4, u + e, h) - product_kernel(KernelKind.GAUSS4, u - e, h)) / (2 * eps)
        assert g[k] == pytest.approx(fd, rel=1e-6)
    with pytest.raises(ValueError):
        product_kernel(KernelKind.GAUSS2, np.zeros(3), h)


@pytest.mark.parametrize("h,b", [((0.0,), 1.0), ((1.0,), -1.0), ((float("inf"),), 1.0)])
def test_bandwidth_validation(h, b):
    with pytest.raises(ValueError):
        BandwidthConfig(h, b)


def test_rule_of_thumb_values():
    spec = get_study(1, n=300)
    data = sample_dataset(spec, np.random.default_rng(0))
    bw = default_bandwidths(data, spec.beta0)
    v = data.x @ spec.beta0.full[:, 0]
    assert bw.nontransplant.kernel is KernelKind.GAUSS2
    assert bw.nontransplant.h[0] == pytest.approx(np.std(v, ddof=1) * 300**-0.26)
    tn = data.z[data.delta & ~data.transplanted]
    assert bw.nontransplant.b == pytest.approx(np.std(tn, ddof=1) * 300**-0.2)
    assert len(bw.transplant.h) == 2
    w = data.w_filled[data.transplanted]
    assert bw.transplant.h[1] == pytest.approx(np.std(w, ddof=1) * 300**-0.26)


def test_two_index_default_is_fourth_order():
    spec = get_study(3, n=200)
    data = sample_dataset(spec, np.random.default_rng(0))
    bw = default_bandwidths(data, spec.beta0)
    assert bw.nontransplant.kernel is KernelKind.GAUSS4
    v = data.x @ spec.beta0.full
    np.testing.assert_allclose(bw.nontransplant.h, np.std(v, axis=0, ddof=1) * 200**-0.15)


def test_degenerate_index_rejected():
    from mrlreg import Dataset

    data = Dataset(np.ones((4, 2)), [1, 2, 3, 4], [1, 1, 1, 1])
    with pytest.raises(ValueError, match="degenerate"):
        default_bandwidths(data, IndexMatrix.zeros(2, 1))
