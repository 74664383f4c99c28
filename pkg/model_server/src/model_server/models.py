"""Model adapters: anything mapping a float batch to integer labels.

The built-in stub needs no weights and keeps CI self-contained: its
label is the argmax of the per-channel mean (ties go to the lowest
channel index). Real models come from torchvision or a TorchScript
file; both are run in eval mode on the configured device.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Model = Callable[[np.ndarray], list[int]]


def stub_model(batch: np.ndarray) -> list[int]:
    return [int(np.argmax(img.mean(axis=(0, 1)))) for img in batch]


def _to_torch_batch(batch: np.ndarray, mean: Sequence[float], std: Sequence[float], device: str):
    import torch

    # frombuffer-backed arrays are read-only; torch needs a writable copy
    x = torch.from_numpy(np.array(batch, dtype=np.float32)).permute(0, 3, 1, 2)
    c = x.shape[1]
    if len(mean) not in (1, c) or len(std) not in (1, c):
        raise ValueError(f"normalization length must be 1 or {c}")
    m = torch.tensor(list(mean), dtype=torch.float32).view(1, -1, 1, 1)
    s = torch.tensor(list(std), dtype=torch.float32).view(1, -1, 1, 1)
    return ((x - m) / s).to(device)


def load_model(
    spec: str,
    device: str = "cpu",
    mean: Sequence[float] = (0.0,),
    std: Sequence[float] = (1.0,),
) -> Model:
    """Build a batch->labels function from a model spec.

    Specs: ``stub``, ``torchvision:<name>`` (pretrained weights), or
    ``torchscript:<path>``. Normalization happens here, after the
    engine's masking: the server never sees masks, only pixels.
    """
    if spec == "stub":
        return stub_model

    if spec.startswith("torchvision:"):
        import torch
        import torchvision.models

        name = spec[len("torchvision:") :]
        factory = getattr(torchvision.models, name, None)
        if factory is None:
            raise ValueError(f"unknown torchvision model {name!r}")
        net = factory(weights="DEFAULT").to(device)
        net.eval()
    elif spec.startswith("torchscript:"):
        import torch

        net = torch.jit.load(spec[len("torchscript:") :], map_location=device)
        net.eval()
    else:
        raise ValueError(f"unknown model spec {spec!r}")

    import torch

    def run(batch: np.ndarray) -> list[int]:
        if batch.shape[0] == 0:
            return []
        with torch.no_grad():
            logits = net(_to_torch_batch(batch, mean, std, device))
        return [int(i) for i in logits.argmax(dim=1).cpu().tolist()]

    return run
