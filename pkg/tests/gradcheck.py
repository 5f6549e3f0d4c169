"""Central finite-difference gradient auditing shared by the unit and acceptance tests."""

from dataclasses import dataclass

import numpy as np
import torch

_OFFSETS = np.arange(-4, 5) / 4.0  # samples at t = h * offset


@dataclass
class GradcheckReport:
    worst: float  # max relative deviation over all probes
    probes: int
    resolved: int  # probes whose derivative clears the round-off noise by 100x


def _roundoff(values: np.ndarray, h: float) -> float:
    """Round-off error of the central difference, from the noise of ``f`` around the probe.

    Over ``[-h, h]`` a smooth ``f`` is a quadratic to within O(h^3), so the
    residual of a least-squares quadratic fit through the nine samples is
    evaluation noise. Its standard deviation ``s`` gives the central
    difference error ``s / (sqrt(2) h)``.
    """
    t = _OFFSETS * h
    coef = np.polyfit(t, values, 2)
    resid = values - np.polyval(coef, t)
    s = np.sqrt((resid**2).sum() / (len(t) - 3))
    return s / (np.sqrt(2.0) * h)


def gradcheck(f, inputs, h=1e-6, n_entries=6, n_directions=3, seed=0) -> GradcheckReport:
    """Compare autograd against central differences for a scalar ``f(*inputs)``.

    Checks ``n_entries`` random coordinates plus ``n_directions`` random
    directional derivatives per input with ``(f(x + h d) - f(x - h d)) / 2h``.
    The deviation of a probe is the part of ``|fd - ad|`` not explained by
    three times the measured round-off error, relative to
    ``max(|ad|, |fd|)``.
    """
    rng = np.random.default_rng(seed)
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = f(*inputs)
    grads = torch.autograd.grad(out, inputs, allow_unused=True)
    grads = [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]
    worst, probes, resolved = 0.0, 0, 0
    with torch.no_grad():
        base = [x.detach().clone() for x in inputs]
        for k, (x, g) in enumerate(zip(base, grads)):
            dirs = []
            flat = rng.choice(x.numel(), size=min(n_entries, x.numel()), replace=False)
            for idx in flat:
                d = torch.zeros_like(x).view(-1)
                d[idx] = 1.0
                dirs.append(d.view_as(x))
            for _ in range(n_directions):
                dirs.append(torch.as_tensor(rng.normal(size=tuple(x.shape)), dtype=x.dtype))
            for d in dirs:
                vals = np.array([f(*[b + (o * h) * d if i == k else b for i, b in enumerate(base)]).item()
                                 for o in _OFFSETS])
                fd = (vals[-1] - vals[0]) / (2 * h)
                ad = float((g * d).sum())
                noise = 3.0 * _roundoff(vals, h)
                scale = max(abs(ad), abs(fd))
                excess = max(0.0, abs(fd - ad) - noise)
                if excess > 0:
                    worst = max(worst, float(excess / scale))
                probes += 1
                resolved += int(scale > 100 * noise)
    return GradcheckReport(worst, probes, resolved)


def max_relative_deviation(f, inputs, **kw) -> float:
    return gradcheck(f, inputs, **kw).worst
