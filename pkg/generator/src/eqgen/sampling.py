"""Sampling from the prior and the Unseen-Valid-Equations measure."""

from __future__ import annotations

import torch

from .model import EquationVae
from .primary import canonicalize_lines


def sample(model: EquationVae, count: int, seed: int = 0,
           temperature: float = 1.1) -> list[str]:
    """Decode ``count`` strings from z ~ N(0, I); validity is not guaranteed."""
    if count <= 0:
        return []
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn((count, model.cfg.latent_dim), generator=gen)
    return model.generate(z, temperature=temperature, generator=gen)


def uve_strings(samples, corpus) -> list[str]:
    """The samples that count toward UVE: parse under the primary grammar and
    are unseen w.r.t. the corpus and earlier samples (by canonical form)."""
    samples = list(samples)
    canon_samples = canonicalize_lines(samples)
    seen = {c for c in canonicalize_lines(list(corpus)) if c is not None}
    out = []
    for original, canon in zip(samples, canon_samples):
        if canon is None or canon in seen:
            continue
        seen.add(canon)
        out.append(original)
    return out


def uve(samples, corpus) -> int:
    """Count of unseen & valid equations among ``samples``."""
    return len(uve_strings(samples, corpus))
