"""Central-difference check of autodiff gradients on sampled parameters."""

import numpy as np
import torch


def finite_difference_check(model, inputs, n_params=10, seed=0, step=1e-6, objective=None):
    """Return a list of (name, index, autodiff, finite_diff, rel_err).

    ``objective(model, inputs)`` must return a scalar; by default it is a
    fixed random projection of the model output. Only entries with a
    non-negligible gradient are sampled so the relative error is meaningful.
    """
    model = model.double()
    inputs = [x.double() for x in inputs]
    gen = torch.Generator().manual_seed(seed)
    if objective is None:
        with torch.no_grad():
            ref = model(*inputs)
        ref = ref if isinstance(ref, torch.Tensor) else torch.cat([r.flatten() for r in ref if r is not None])
        proj = torch.randn(ref.shape, generator=gen, dtype=torch.float64)

        def objective(m, xs):
            out = m(*xs)
            out = out if isinstance(out, torch.Tensor) else torch.cat(
                [r.flatten() for r in out if r is not None])
            return (out * proj).sum()

    model.zero_grad()
    objective(model, inputs).backward()
    named = [(n, p) for n, p in model.named_parameters() if p.grad is not None]
    candidates = [(n, p, i) for n, p in named
                  for i in torch.nonzero(p.grad.abs().flatten() > 1e-5).flatten().tolist()]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=min(n_params, len(candidates)), replace=False)
    results = []
    with torch.no_grad():
        for k in picks:
            name, p, i = candidates[k]
            flat = p.view(-1)
            orig = flat[i].item()
            flat[i] = orig + step
            up = objective(model, inputs).item()
            flat[i] = orig - step
            down = objective(model, inputs).item()
            flat[i] = orig
            fd = (up - down) / (2 * step)
            ad = p.grad.view(-1)[i].item()
            rel = abs(fd - ad) / max(abs(fd), abs(ad))
            results.append((name, i, ad, fd, rel))
    return results
