"""Analytic vs. central-difference gradient check over a random parameter slice."""

import logging
from dataclasses import dataclass

import torch


@dataclass
class GradientCheckResult:
    name: str
    max_relative_error: float
    checked: int

    def passed(self, tolerance=1e-3):
        return self.max_relative_error <= tolerance


def check_parameter_gradients(module, probe, n_entries=6, step=1e-6, seed=0, floor=1e-8):
    """Compare d probe() / d theta with central differences for random entries.

    probe is a zero-argument callable returning a scalar built from the module's
    current parameters; the module should already be in float64 and eval mode.
    Entries with both gradients below `floor` are skipped as uninformative.
    """
    generator = torch.Generator().manual_seed(seed)
    named = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    if not named:
        raise ValueError("Module has no trainable parameters to check")

    module.zero_grad(set_to_none=True)
    loss = probe()
    loss.backward()
    analytic = {n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) for n, p in named}

    worst = 0.0
    checked = 0
    attempts = 0
    while checked < n_entries and attempts < n_entries * 20:
        attempts += 1
        name, param = named[int(torch.randint(len(named), (1,), generator=generator))]
        flat_index = int(torch.randint(param.numel(), (1,), generator=generator))
        flat = param.data.view(-1)
        original = flat[flat_index].item()
        with torch.no_grad():
            flat[flat_index] = original + step
            plus = probe().item()
            flat[flat_index] = original - step
            minus = probe().item()
            flat[flat_index] = original
        numeric = (plus - minus) / (2 * step)
        exact = analytic[name].view(-1)[flat_index].item()
        if abs(numeric) < floor and abs(exact) < floor:
            continue
        error = abs(numeric - exact) / max(abs(numeric), abs(exact))
        worst = max(worst, error)
        checked += 1

    module.zero_grad(set_to_none=True)
    result = GradientCheckResult(type(module).__name__, worst, checked)
    logging.info(f"Gradient check {result.name}: {checked} entries, max relative error {worst:.2e}")
    return result
