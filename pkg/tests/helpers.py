"""Finite-difference oracle shared by the gradient tests."""
import numpy as np
import torch


def rel_error(a, b, floor=1e-12):
    """||a - b|| / max(||a||, ||b||) over the sampled entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def fd_grad(fn, tensor, indices, eps=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. selected flat entries of ``tensor``."""
    flat = tensor.data.view(-1)
    out = []
    for i in indices:
        orig = flat[i].item()
        flat[i] = orig + eps
        plus = float(fn().detach())
        flat[i] = orig - eps
        minus = float(fn().detach())
        flat[i] = orig
        out.append((plus - minus) / (2 * eps))
    return np.array(out)


def autograd_grad(fn, tensor, indices):
    tensor.grad = None
    loss = fn()
    (g,) = torch.autograd.grad(loss, tensor)
    return g.reshape(-1)[list(indices)].detach().numpy()


def sample_indices(tensor, n, rng):
    size = tensor.numel()
    return sorted(rng.choice(size, size=min(n, size), replace=False).tolist())
