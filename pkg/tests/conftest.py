import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_gradient(f, x: torch.Tensor, step: float = 1e-5) -> torch.Tensor:
    """Central finite differences of a scalar function, element by element."""
    x = x.detach().clone().contiguous()
    grad = torch.zeros_like(x)
    flat = grad.view(-1)
    xf = x.view(-1)
    for i in range(xf.numel()):
        orig = xf[i].item()
        xf[i] = orig + step
        fp = float(f(x))
        xf[i] = orig - step
        fm = float(f(x))
        xf[i] = orig
        flat[i] = (fp - fm) / (2 * step)
    return grad


def max_rel_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-6) -> float:
    a = a.detach().reshape(-1)
    b = b.detach().reshape(-1)
    denom = torch.maximum(torch.maximum(a.abs(), b.abs()), torch.full_like(a, floor))
    return float(((a - b).abs() / denom).max())
