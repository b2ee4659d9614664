"""Checks a backbone adapter must pass before it can drive an inversion.

Run ``run_conformance(backbone)`` from an adapter's own test-suite; each check
returns ``(name, ok, detail)``. The toy backbone passes all of them.
"""

from __future__ import annotations

import torch

from .backbone import PLACEHOLDER, parameter_digest, sample_latent
from .errors import MissingPlaceholder


def _check(fn):
    fn.is_check = True
    return fn


@_check
def timestep_convention(bb):
    s = bb.schedule
    assert torch.isclose(s.signal[0], torch.tensor(1.0, dtype=s.signal.dtype)), "signal[0] must be 1"
    assert torch.isclose(s.noise[0], torch.tensor(0.0, dtype=s.noise.dtype)), "noise[0] must be 0"
    assert bool((s.signal[1:] <= s.signal[:-1]).all()), "signal coefficient must decrease with t"
    return f"T={s.T}"


@_check
def injection_identity(bb):
    v = torch.randn(bb.embedding_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    enc = bb.encode_text(f"a {PLACEHOLDER}", v)
    assert enc.placeholder_slot is not None, "placeholder slot not recorded"
    assert torch.equal(enc.token_embeddings[enc.placeholder_slot].to(v.dtype), v), "injected vector not placed verbatim"
    return f"slot={enc.placeholder_slot}"


@_check
def injection_default(bb):
    plain = bb.encode_text(f"a {PLACEHOLDER}")
    injected = bb.encode_text(f"a {PLACEHOLDER}", bb.token_embedding(bb.placeholder))
    assert torch.allclose(plain.encoded_condition, injected.encoded_condition), "placeholder default differs"
    return "ok"


@_check
def ambiguous_placeholder(bb):
    v = torch.zeros(bb.embedding_dim, dtype=torch.float64)
    try:
        bb.encode_text(f"{PLACEHOLDER} {PLACEHOLDER}", v)
    except MissingPlaceholder:
        return "rejected"
    raise AssertionError("two placeholders with an injection must raise MissingPlaceholder")


@_check
def gradient_reaches_injection(bb):
    v = bb.token_embedding(bb.placeholder).clone().requires_grad_(True)
    enc = bb.encode_text(f"a {PLACEHOLDER}", v)
    x = torch.zeros(bb.latent_shape, dtype=torch.float64)
    out = bb.predict_noise(x, bb.schedule.T, enc)
    assert out.shape == x.shape, f"predicted noise shape {tuple(out.shape)} != latent {tuple(x.shape)}"
    out.pow(2).sum().backward()
    assert v.grad is not None and bool(torch.isfinite(v.grad).all()), "no finite gradient on injected vector"
    assert all(not p.requires_grad for p in bb.parameters().values()), "backbone parameters must be frozen"
    return f"|grad|={float(v.grad.norm()):.3g}"


@_check
def deterministic_prediction(bb):
    enc = bb.encode_text("a")
    x = torch.ones(bb.latent_shape, dtype=torch.float64)
    a = bb.predict_noise(x, 1, enc)
    b = bb.predict_noise(x, 1, enc)
    assert torch.equal(a, b), "predict_noise is not deterministic"
    return "ok"


@_check
def add_noise_linear(bb):
    g = torch.Generator().manual_seed(1)
    x0, x1, e0, e1 = (torch.randn(bb.latent_shape, generator=g, dtype=torch.float64) for _ in range(4))
    t = max(1, bb.schedule.T // 2)
    lhs = bb.add_noise(2 * x0 + x1, 2 * e0 + e1, t)
    rhs = 2 * bb.add_noise(x0, e0, t) + bb.add_noise(x1, e1, t)
    assert torch.allclose(lhs, rhs), "add_noise must be linear in (x0, eps)"
    return "ok"


@_check
def frozen_after_sampling(bb):
    before = parameter_digest(bb)
    sample_latent(bb, f"a {PLACEHOLDER}", bb.token_embedding(bb.placeholder), steps=2, seed=0)
    assert parameter_digest(bb) == before, "sampling changed backbone parameters"
    return before[:12]


CHECKS = [
    timestep_convention,
    injection_identity,
    injection_default,
    ambiguous_placeholder,
    gradient_reaches_injection,
    deterministic_prediction,
    add_noise_linear,
    frozen_after_sampling,
]


def run_conformance(backbone) -> list[tuple[str, bool, str]]:
    results = []
    for check in CHECKS:
        try:
            results.append((check.__name__, True, check(backbone)))
        except Exception as exc:  # noqa: BLE001 - report every failure, keep going
            results.append((check.__name__, False, f"{type(exc).__name__}: {exc}"))
    return results
