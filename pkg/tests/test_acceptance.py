"""Acceptance criteria, one test each.  Every test records a PASS/FAIL line
that the terminal summary prints after the run."""

import random
import time

import pytest
import torch
from click.testing import CliRunner

from cdsm.analysis import compare, perturb_entry, perturb_trgb
from cdsm.archive import save_weights
from cdsm.cli import cli
from cdsm.errors import FingerprintMismatch
from cdsm.generator import (
    GeneratorConfig,
    StyleCode,
    build_layer_table,
    init_weights,
    map_z_to_w,
    styles_from_wplus,
    synthesize,
    synthesize_from_styles,
)
from cdsm.images import save_png
from cdsm.inversion import (
    ProjectionConfig,
    build_character_bank,
    invert_source,
    load_bank,
    project_batch,
    query_bank,
    reconstruction_mse,
    save_bank,
)
from cdsm.latent_ops import average_wplus, replace_trgb, style_mix, t_of_m
from cdsm.layer_swap import SOURCE, TARGET, swap_layers
from cdsm.pipeline import stylize

from conftest import ACCEPTANCE


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    assert ok, detail


def random_wplus(G, n, seed):
    """n W+ codes whose rows come from independent z draws."""
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(n * G.config.num_ws, G.config.latent_dim, generator=g)
    with torch.no_grad():
        return map_z_to_w(G, z).reshape(n, G.config.num_ws, -1)


def test_1_style_algebra():
    table = build_layer_table(GeneratorConfig(output_resolution=16))
    rows = [e.row for e in table]
    trgb = [e.name.startswith("trgb_") for e in table]
    g = torch.Generator().manual_seed(2024)
    rnd = random.Random(2024)
    t0 = time.perf_counter()
    failures = []
    for i in range(1000):
        sf = StyleCode([torch.randn(e.width, generator=g) for e in table], table)
        sc = StyleCode([torch.randn(e.width, generator=g) for e in table], table)
        m = rnd.randint(0, table.num_ws)
        t = next((j + 1 for j, r in enumerate(rows) if r >= m), len(rows) + 1)
        if t_of_m(table, m) != t:
            failures.append(f"t({m})")
        mixed = style_mix(sf, sc, m)
        if not all(torch.equal(v, (sf if j + 1 < t else sc).values[j]) for j, v in enumerate(mixed.values)):
            failures.append(f"partition #{i}")
        r = replace_trgb(sf, sc)
        if not all(torch.equal(v, (sc if trgb[j] else sf).values[j]) for j, v in enumerate(r.values)):
            failures.append(f"R #{i}")
        full = style_mix(r, sc, m)
        if not all(torch.equal(v, sc.values[j]) for j, v in enumerate(full.values) if trgb[j]):
            failures.append(f"tRGB totality #{i}")
        if not full.equal(replace_trgb(mixed, sc)):
            failures.append(f"commutation #{i}")
    ts = [t_of_m(table, m) for m in range(table.num_ws + 1)]
    if ts != sorted(ts):
        failures.append("t(m) monotonicity")
    dt = time.perf_counter() - t0
    record(1, not failures and dt < 10, f"1000 instances, {len(failures)} violations, {dt:.2f}s (< 10s)")


def test_2_layer_table_law():
    t1024 = build_layer_table(GeneratorConfig(output_resolution=1024))
    t16 = build_layer_table(GeneratorConfig(output_resolution=16))
    hand16 = [("conv_4", 0), ("trgb_4", 1), ("conv0_8", 1), ("conv1_8", 2), ("trgb_8", 3),
              ("conv0_16", 3), ("conv1_16", 4), ("trgb_16", 5)]
    ok = (len(t1024), t1024.num_ws, len(t16), t16.num_ws) == (26, 18, 8, 6)
    ok = ok and [(e.name, e.row) for e in t16] == hand16
    record(2, ok, f"1024: L={len(t1024)} num_ws={t1024.num_ws}; 16: L={len(t16)} num_ws={t16.num_ws}")


def test_3_trgb_structural_invariance(G):
    t0 = time.perf_counter()
    codes = random_wplus(G, 20, 31)
    worst_feat, min_rgb, control = 0.0, float("inf"), float("inf")
    for wplus in codes:
        styles = styles_from_wplus(G, wplus)
        for n in (0.25, 0.5, 1.0):
            row, _ = compare(G, styles, perturb_trgb(styles, n), noise_seed=0, strength=n)
            worst_feat = max(worst_feat, row.max_feature_diff)
            min_rgb = min(min_rgb, row.mean_rgb_diff)
        row, _ = compare(G, styles, perturb_entry(styles, 0, 0.5), noise_seed=0)
        control = min(control, row.max_feature_diff)
    dt = time.perf_counter() - t0
    ok = worst_feat == 0.0 and min_rgb > 0 and control > 0 and dt < 30
    record(3, ok, f"max feature diff {worst_feat}, min mean RGB diff {min_rgb:.3g}, "
                  f"min control feature diff {control:.3g}, {dt:.1f}s (< 30s)")


def test_4_swap_provenance(source, target):
    swapped = swap_layers(source, target, 16)
    neither, wrong, ambiguous = [], [], []
    for name, t in swapped.items():
        s, g = torch.equal(t, source[name]), torch.equal(t, target[name])
        res = 4 if name == "const_input" else None
        if not name.startswith("mapping_") and res is None:
            res = int(name.split(".")[0].rsplit("_", 1)[1])
        expected = TARGET if res is not None and res >= 16 else SOURCE
        if not (s or g):
            neither.append(name)
        elif s and g:
            ambiguous.append(name)
        elif (SOURCE if s else TARGET) != expected:
            wrong.append(name)
    ok = not (neither or wrong or ambiguous)
    record(4, ok, f"{len(swapped.tensors)} tensors, neither={len(neither)} wrong={len(wrong)} "
                  f"both={len(ambiguous)} {ambiguous[:3]}")


def test_5_inversion_round_trip(G):
    t0 = time.perf_counter()
    with torch.no_grad():
        targets = synthesize(G, random_wplus(G, 20, 55), noise_seed=None)
    wp = project_batch(G, targets, ProjectionConfig(space="W+", steps=500))
    w = project_batch(G, targets, ProjectionConfig(space="W", steps=500))
    mse_wp = [reconstruction_mse(G, r, img) for r, img in zip(wp, targets)]
    mse_w = [reconstruction_mse(G, r, img) for r, img in zip(w, targets)]
    ordered = sum(b >= a for a, b in zip(mse_wp, mse_w))
    dt = time.perf_counter() - t0
    ok = max(mse_wp) <= 1e-3 and ordered >= 18 and dt < 180
    record(5, ok, f"W+ MSE max {max(mse_wp):.3g} (<= 1e-3), W worse-or-equal on {ordered}/20 (>= 18), "
                  f"{dt:.0f}s (< 180s)")


@pytest.fixture(scope="module")
def bank(swapped, cartoon_samples):
    data = [(s.label, s.image, s.name) for s in cartoon_samples]
    return build_character_bank(swapped, data, k=8, cfg=ProjectionConfig(steps=100), seed=0)


def test_6_bank_correctness(swapped, bank, tmp_path):
    worst = 0.0
    for cid in bank.ids:
        codes = bank.per_image[cid]
        total = torch.zeros_like(codes[0], dtype=torch.float64)
        for c in codes:
            total += c.double()
        worst = max(worst, float((bank.codes[cid].double() - total / len(codes)).abs().max()))
    sizes = {len(v) for v in bank.per_image.values()}
    loaded = load_bank(save_bank(bank, tmp_path / "bank.json"))
    refused = False
    try:
        query_bank(loaded, bank.ids[0], init_weights(swapped.config, 99))
    except FingerprintMismatch:
        refused = True
    ok = worst <= 1e-6 and sizes == {8} and loaded.equal(bank) and refused
    record(6, ok, f"{len(bank.ids)} IDs x k=8, max re-average diff {worst:.2g} (<= 1e-6), "
                  f"round-trip exact={loaded.equal(bank)}, mismatch refused={refused}")


def test_7_end_to_end_determinism(swapped, bank, face_samples, tmp_path):
    face = face_samples[0].image
    cid = "kiro"
    proj = ProjectionConfig(steps=100)
    wc = query_bank(bank, cid, swapped)
    wf = invert_source(swapped, face, proj)
    img0 = stylize(swapped, bank, face, cid, 0, noise_seed=0, projection=proj)
    imgL = stylize(swapped, bank, face, cid, swapped.config.num_ws, noise_seed=0, projection=proj)
    with torch.no_grad():
        ref0 = synthesize(swapped, wc, noise_seed=0)
        refL = synthesize_from_styles(swapped, replace_trgb(styles_from_wplus(swapped, wf),
                                                            styles_from_wplus(swapped, wc)), noise_seed=0)
    limits = torch.equal(img0, ref0) and torch.equal(imgL, refL)

    w_path = save_weights(swapped, tmp_path / "swapped.cdsmw")
    b_path = save_bank(bank, tmp_path / "bank.json")
    f_path = save_png(face, tmp_path / "face.png")
    pngs = []
    for i in range(2):
        r = CliRunner().invoke(cli, ["stylize", "--weights", str(w_path), "--bank", str(b_path), "--face", str(f_path),
                                     "--id", cid, "--steps", "100", "--run-dir", str(tmp_path / f"run{i}")])
        assert r.exit_code == 0, r.output
        pngs.append((tmp_path / f"run{i}" / "stylized.png").read_bytes())
    same = pngs[0] == pngs[1]
    record(7, limits and same, f"m=0 and m=num_ws bit-exact={limits}, CLI PNGs byte-identical={same}")


def test_8_finetune_smoke(source, finetune_run, cfg):
    run = finetune_run
    start_weights = init_weights(cfg, 2)
    shapes = all(t.shape == start_weights[n].shape for n, t in run.weights.items())
    swapped = swap_layers(source, run.weights, 16)
    ok = run.steps == 200 and run.g_loss_end < run.g_loss_start and shapes and run.mixing_events == 0
    record(8, ok, f"G loss under final critic {run.g_loss_start:.3f} -> {run.g_loss_end:.3f}, "
                  f"shapes preserved={shapes}, swap applies={len(swapped.tensors)} tensors")
