"""Finite-difference check of the network's backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .model import ModelConfig, grad, init_params, loss_weighted_bce

TINY_CONFIG = ModelConfig(frames=4, resolution=16, tubelet=2, patch=8, dim=16, layers=2, heads=2, channels=1)
# |analytic - numeric| is divided by max(|analytic|, |numeric|, REL_FLOOR);
# entries smaller than the floor are judged on absolute error instead
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    n_checked: int


def check_gradients(
    config: ModelConfig = TINY_CONFIG,
    seed: int = 0,
    batch_size: int = 2,
    class_weight: float = 3.0,
    step: float = 1e-5,
    init_scale: float = 10.0,
) -> GradCheckResult:
    """Compare backprop against central differences on every parameter, in float64.

    Weights are scaled up from the 0.02 init so attention and the MLPs are
    far from their linear regime and every branch contributes.
    """
    model = init_params(config, seed, dtype=torch.float64)
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.as_tensor(rng.normal(0.0, 0.02 * init_scale, size=tuple(p.shape))))
    clips = torch.as_tensor(
        rng.normal(0.0, 1.0, size=(batch_size, config.frames, config.resolution, config.resolution, config.channels))
    )
    targets = torch.as_tensor(rng.choice([0.0, 0.5, 1.0], size=(batch_size, 88)))
    _, analytic = grad(model, (clips, targets), class_weight)

    def loss() -> float:
        with torch.no_grad():
            return float(loss_weighted_bce(model(clips), targets, class_weight))

    worst, worst_name, count = 0.0, "", 0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            a = analytic[name].reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + step
                up = loss()
                flat[i] = orig - step
                down = loss()
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                ai = float(a[i])
                err = abs(ai - numeric) / max(abs(ai), abs(numeric), REL_FLOOR)
                count += 1
                if err > worst:
                    worst, worst_name = err, f"{name}[{i}]"
    return GradCheckResult(worst, worst_name, count)
