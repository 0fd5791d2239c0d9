import numpy as np
import pytest
import torch

from itamdt.synth import gen_dataset


def finite_difference_errors(loss_fn, params, n=20, h=1e-3, seed=0):
    """Relative errors between autograd and central differences at ``n`` random coordinates.

    ``params`` is a list of float64 tensors with ``requires_grad``; ``loss_fn``
    takes no arguments and returns a scalar.
    """
    params = [p for p in params if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params], dtype=float)
    errors = []
    for _ in range(n):
        k = rng.choice(len(params), p=sizes / sizes.sum())
        j = int(rng.integers(params[k].numel()))
        flat = params[k].data.view(-1)
        orig = flat[j].item()
        with torch.no_grad():
            flat[j] = orig + h
            up = loss_fn().item()
            flat[j] = orig - h
            down = loss_fn().item()
            flat[j] = orig
        numeric = (up - down) / (2 * h)
        analytic = grads[k].view(-1)[j].item()
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6))
    return np.array(errors)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    gen_dataset(3, 40, root)
    return root


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
