"""Test-only oracles."""
import torch


def finite_difference_grads(fn, tensors, h=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``tensors``."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = fn().item()
                flat[i] = old - h
                down = fn().item()
                flat[i] = old
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def gradient_check(module, x, seed=0):
    """Compare autograd with central differences for a random linear loss.

    Returns ``(error, scale)`` where ``scale`` is the largest gradient entry
    over every parameter and the input, and ``error`` is the largest
    ``|analytic - numeric|`` divided by ``scale``. Normalizing per block
    rather than per tensor keeps tensors whose whole gradient sits near the
    round-off floor of the difference quotient from dominating.
    """
    module = module.double().eval()
    x = x.double().clone().requires_grad_(True)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        weights = torch.randn(module(x).shape, generator=gen, dtype=torch.float64)

    def loss():
        return (module(x) * weights).sum()

    tensors = list(module.parameters()) + [x]
    for t in tensors:
        t.grad = None
    loss().backward()
    analytic = [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t) for t in tensors]
    numeric = finite_difference_grads(loss, [t.data for t in tensors])
    scale = max(max(a.abs().max().item(), n.abs().max().item()) for a, n in zip(analytic, numeric))
    if scale == 0:
        return 0.0, 0.0
    return max((a - n).abs().max().item() for a, n in zip(analytic, numeric)) / scale, scale


def max_relative_grad_error(module, x, seed=0):
    error, scale = gradient_check(module, x, seed)
    assert scale > 0, "every gradient is zero; the check would be vacuous"
    return error
