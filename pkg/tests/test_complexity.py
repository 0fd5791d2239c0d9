import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from itamdt.complexity import complexity_vector, gradient_magnitude, sparsity, variance


def naive_gradient(f):
    L, s, d = f.shape
    total = 0.0
    for i in range(L):
        for j in range(s - 1):
            for k in range(d - 1):
                dj = f[i, j + 1, k] - f[i, j, k]
                dk = f[i, j, k + 1] - f[i, j, k]
                total += np.sqrt(dj * dj + dk * dk)
    return total / (L * (s - 1) * (d - 1))


def two_pass_variance(f):
    x = f.ravel()
    mean = sum(x) / len(x)
    return sum((v - mean) ** 2 for v in x) / len(x)


def rand_stack(seed, shape=(4, 16, 64)):
    return np.random.default_rng(seed).standard_normal(shape)


def test_trivial_stacks():
    z = torch.zeros(4, 16, 64)
    assert complexity_vector(z).tolist() == [1.0, 0.0, 0.0]
    assert sparsity(torch.ones(2, 3, 4)) == 0
    half = torch.full((2, 4, 4), 0.005)
    half[1] = 1.0
    assert sparsity(half) == 0.5
    alt = torch.tensor([-1.0, 1.0] * 16).reshape(2, 4, 4)
    assert variance(alt) == 1.0
    assert variance(torch.full((3, 3, 3), 2.5)) == 0
    assert gradient_magnitude(torch.full((3, 3, 3), 2.5)) == 0


def test_strict_threshold():
    f = torch.tensor([0.01, -0.01, 0.0099, 0.02], dtype=torch.float64).reshape(1, 2, 2)
    assert sparsity(f, 0.01) == 0.25


@pytest.mark.parametrize("slope", [0.3, -1.7, 2.0])
def test_linear_ramp(slope):
    ramp = slope * torch.arange(16, dtype=torch.float64)
    f = ramp[None, :, None].expand(4, 16, 64).clone() + 5.0
    assert abs(float(gradient_magnitude(f)) - abs(slope)) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_random_matches_oracles(seed):
    f = rand_stack(seed, (3, 6, 9))
    c = complexity_vector(torch.from_numpy(f)).numpy()
    oracle = np.array([np.mean(np.abs(f) < 0.01), two_pass_variance(f), naive_gradient(f)])
    np.testing.assert_allclose(c, oracle, rtol=1e-6)


def test_float32_input_is_reduced_in_float64():
    f = rand_stack(7).astype(np.float32)
    v = float(variance(torch.from_numpy(f)))
    assert v == pytest.approx(two_pass_variance(f.astype(np.float64)), rel=1e-6)


def test_batched_reduction():
    f = torch.from_numpy(np.stack([rand_stack(i, (2, 4, 5)) for i in range(3)]))
    batch = complexity_vector(f)
    assert batch.shape == (3, 3)
    for i in range(3):
        assert torch.allclose(batch[i], complexity_vector(f[i]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), a=st.floats(-5, 5).filter(lambda x: abs(x) > 1e-3))
def test_scale_response(seed, a):
    f = torch.from_numpy(rand_stack(seed, (2, 5, 6)))
    assert float(variance(a * f)) == pytest.approx(a * a * float(variance(f)), rel=1e-9)
    assert float(gradient_magnitude(a * f)) == pytest.approx(abs(a) * float(gradient_magnitude(f)), rel=1e-9)
    assert float(sparsity(-f)) == float(sparsity(f))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), d1=st.floats(1e-4, 2.0), d2=st.floats(1e-4, 2.0))
def test_sparsity_monotone_in_delta(seed, d1, d2):
    lo, hi = sorted((d1, d2))
    f = torch.from_numpy(rand_stack(seed, (2, 4, 4)))
    assert float(sparsity(f, hi)) >= float(sparsity(f, lo))


def test_errors():
    with pytest.raises(ValueError):
        sparsity(torch.zeros(2, 2, 2), 0.0)
    with pytest.raises(ValueError):
        gradient_magnitude(torch.zeros(2, 1, 5))
    with pytest.raises(ValueError):
        variance(torch.zeros(1, 1, 1))
    with pytest.raises(ValueError):
        complexity_vector(torch.zeros(4, 4))
