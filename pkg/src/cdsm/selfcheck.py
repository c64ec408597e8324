"""Invariant suite run by ``cdsm selfcheck`` on a freshly seeded toy generator."""

from __future__ import annotations

import random
import tempfile
import time
from pathlib import Path
from typing import Callable, List, NamedTuple

import torch

from . import archive
from .analysis import perturb_entry, perturb_trgb, compare
from .errors import FingerprintMismatch
from .generator import (
    GeneratorConfig,
    StyleCode,
    build_layer_table,
    init_weights,
    map_z_to_w,
    sample_z,
    styles_from_wplus,
    synthesize,
    synthesize_from_styles,
)
from .inversion import CharacterBank, ProjectionConfig, load_bank, project, query_bank, save_bank
from .latent_ops import cdsm, replace_trgb, style_mix, t_of_m
from .layer_swap import audit_swap, swap_layers


class CheckResult(NamedTuple):
    name: str
    ok: bool
    detail: str
    seconds: float


def _random_styles(table, gen):
    return StyleCode([torch.randn(e.width, generator=gen) for e in table], table)


def check_layer_tables():
    t1024 = build_layer_table(GeneratorConfig(output_resolution=1024))
    t16 = build_layer_table(GeneratorConfig(output_resolution=16))
    t8 = build_layer_table(GeneratorConfig(output_resolution=8))
    ok = (
        (len(t1024), t1024.num_ws) == (26, 18)
        and (len(t16), t16.num_ws) == (8, 6)
        and [(e.name, e.row) for e in t8]
        == [("conv_4", 0), ("trgb_4", 1), ("conv0_8", 1), ("conv1_8", 2), ("trgb_8", 3)]
        and t_of_m(t1024, 6) == 10
    )
    return ok, f"L(1024)={len(t1024)} num_ws(1024)={t1024.num_ws} L(16)={len(t16)} num_ws(16)={t16.num_ws}"


def check_style_algebra(instances: int = 1000, resolution: int = 16):
    table = build_layer_table(GeneratorConfig(output_resolution=resolution))
    gen = torch.Generator().manual_seed(1234)
    rnd = random.Random(1234)
    for _ in range(instances):
        sf, sc = _random_styles(table, gen), _random_styles(table, gen)
        m = rnd.randint(0, table.num_ws)
        t = min([e.index for e in table if e.row >= m], default=len(table) + 1)
        mixed = style_mix(sf, sc, m)
        for e, v in zip(table, mixed.values):
            if not torch.equal(v, (sf if e.index < t else sc)[e.index - 1]):
                return False, f"partition law broken at m={m}, {e.name}"
        lhs = style_mix(replace_trgb(sf, sc), sc, m)
        if not lhs.equal(replace_trgb(mixed, sc)):
            return False, f"SM/R commutation broken at m={m}"
        for e, v in zip(table, lhs.values):
            if e.is_trgb and not torch.equal(v, sc[e.index - 1]):
                return False, f"tRGB totality broken at m={m}"
    ts = [t_of_m(table, m) for m in range(table.num_ws + 1)]
    if ts != sorted(ts):
        return False, f"t(m) not monotone: {ts}"
    return True, f"{instances} instances on the {resolution}x{resolution} table"


def check_trgb_invariance(weights, codes: int = 5):
    gen = torch.Generator().manual_seed(7)
    for i in range(codes):
        wplus = map_z_to_w(weights, torch.randn(weights.config.num_ws, weights.config.latent_dim, generator=gen))
        styles = styles_from_wplus(weights, wplus.detach())
        for n in (0.25, 0.5, 1.0):
            row, _ = compare(weights, styles, perturb_trgb(styles, n), strength=n)
            if row.max_feature_diff != 0.0 or not row.mean_rgb_diff > 0:
                return False, f"code {i} N={n}: feature diff {row.max_feature_diff}, rgb diff {row.mean_rgb_diff}"
        row, _ = compare(weights, styles, perturb_entry(styles, 0, 0.5))
        if not row.max_feature_diff > 0:
            return False, "conv control perturbation left features unchanged"
    return True, f"{codes} codes x N in (0.25, 0.5, 1.0), control ok"


def check_swap(config):
    source, target = init_weights(config, 1), init_weights(config, 2)
    swapped = swap_layers(source, target, 16)
    for name, expected, is_src, is_tgt in audit_swap(swapped, source, target, 16):
        if not (is_src if expected == "source" else is_tgt):
            return False, f"{name} does not come from {expected}"
    again = archive.from_bytes(archive.to_bytes(swapped))
    if not again.equal(swapped):
        return False, "swapped weights do not survive an archive round-trip"
    return True, f"{len(swapped.tensors)} tensors audited"


def check_determinism(weights):
    z = sample_z(weights.config, 4, 3)
    a = synthesize(weights, z, space="z")
    b = synthesize(weights, z, space="z")
    wp = map_z_to_w(weights, z)
    c = synthesize(weights, wp, space="w")
    return torch.equal(a, b) and torch.equal(a, c), "repeated and W/Z paths bit-identical"


def check_projection(weights, steps: int = 150):
    z = sample_z(weights.config, 1, 11)
    with torch.no_grad():
        target = synthesize(weights, map_z_to_w(weights, z)[0], space="w")
    res = project(weights, target, ProjectionConfig(steps=steps))
    ok = res.loss < res.losses[0] and all(b >= a for b, a in zip(res.best_losses, res.best_losses[1:]))
    return ok, f"loss {res.losses[0]:.4g} -> {res.loss:.4g} in {steps} steps"


def check_bank_and_cdsm(weights):
    gen = torch.Generator().manual_seed(5)
    code = lambda: torch.randn(weights.config.num_ws, weights.config.latent_dim, generator=gen)
    bank = CharacterBank({"a": code(), "b": code()}, k=1, seed=0, fingerprint=weights.fingerprint())
    with tempfile.TemporaryDirectory() as tmp:
        loaded = load_bank(save_bank(bank, Path(tmp) / "bank.json"))
    if not loaded.equal(bank):
        return False, "bank save/load not bit-exact"
    try:
        query_bank(loaded, "a", init_weights(weights.config, 999))
        return False, "fingerprint mismatch not refused"
    except FingerprintMismatch:
        pass
    wf, wc = code(), query_bank(loaded, "a", weights)
    sc = styles_from_wplus(weights, wc)
    if not cdsm(wf, wc, 0, weights).equal(sc):
        return False, "cdsm(m=0) != A(w^c)"
    full = cdsm(wf, wc, weights.config.num_ws, weights)
    if not full.equal(replace_trgb(styles_from_wplus(weights, wf), sc)):
        return False, "cdsm(m=num_ws) != R(A(w^f), A(w^c))"
    img1 = synthesize_from_styles(weights, full)
    img2 = synthesize_from_styles(weights, full)
    return torch.equal(img1, img2), "bank round-trip, fingerprint refusal, cdsm limits"


def run_selfcheck(seed: int = 0, echo: Callable[[str], None] = print) -> List[CheckResult]:
    config = GeneratorConfig()
    weights = init_weights(config, seed)
    checks = [
        ("layer-table law", check_layer_tables),
        ("style algebra", check_style_algebra),
        ("tRGB structural invariance", lambda: check_trgb_invariance(weights)),
        ("swap provenance", lambda: check_swap(config)),
        ("forward determinism", lambda: check_determinism(weights)),
        ("projection descent", lambda: check_projection(weights)),
        ("bank and cdsm limits", lambda: check_bank_and_cdsm(weights)),
    ]
    results = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a selfcheck crash
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        r = CheckResult(name, bool(ok), detail, time.perf_counter() - t0)
        results.append(r)
        echo(f"[{'PASS' if r.ok else 'FAIL'}] {name}: {detail} ({r.seconds:.1f}s)")
    return results
