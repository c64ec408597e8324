import csv

import pytest
import torch

from cdsm.analysis import compare, perturb_entry, perturb_trgb, structure_invariance_report
from cdsm.generator import map_z_to_w, sample_z, styles_from_wplus


@pytest.fixture(scope="module")
def styles(G):
    with torch.no_grad():
        return styles_from_wplus(G, map_z_to_w(G, sample_z(G.config, 1, 5))[0].expand(G.config.num_ws, -1))


def test_zero_strength_is_identity(styles):
    assert perturb_trgb(styles, 0.0).equal(styles)


def test_minus_one_zeroes_trgb_only(styles):
    out = perturb_trgb(styles, -1.0)
    for e, a, b in zip(styles.table, out.values, styles.values):
        assert torch.equal(a, torch.zeros_like(b)) if e.is_trgb else torch.equal(a, b)


def test_half_strength_entrywise(styles):
    out = perturb_trgb(styles, 0.5)
    for e, a, b in zip(styles.table, out.values, styles.values):
        expected = [1.5 * x for x in b.tolist()] if e.is_trgb else b.tolist()
        assert a.tolist() == pytest.approx(expected, rel=1e-6)


def test_randomized_is_seeded(styles):
    a = perturb_trgb(styles, 0.5, seed=3, randomized=True)
    assert a.equal(perturb_trgb(styles, 0.5, seed=3, randomized=True))
    assert not a.equal(perturb_trgb(styles, 0.5))


def test_features_invariant_and_rgb_grows(G, styles):
    diffs = []
    for n in (0.25, 0.5, 1.0):
        row, _ = compare(G, styles, perturb_trgb(styles, n), strength=n)
        assert row.max_feature_diff == 0.0
        diffs.append(row.mean_rgb_diff)
    assert diffs == sorted(diffs) and diffs[0] > 0


def test_conv_control_changes_features(G, styles):
    row, _ = compare(G, styles, perturb_entry(styles, 2, 0.5))
    assert row.max_feature_diff > 0


def test_report_files(G, styles, tmp_path):
    report = structure_invariance_report(G, styles, [0.25, 1.0], noise_seed=0, out_dir=tmp_path)
    assert report.structure_preserved
    names = sorted(p.name for p in report.files)
    assert names == ["baseline.png", "diffs.csv", "diffs.svg", "perturbed_N+0.250.png", "perturbed_N+1.000.png"]
    rows = list(csv.DictReader((tmp_path / "diffs.csv").open()))
    assert [float(r["strength"]) for r in rows] == [0.25, 1.0]
    first = (tmp_path / "diffs.svg").read_bytes()
    structure_invariance_report(G, styles, [0.25, 1.0], noise_seed=0, out_dir=tmp_path)
    assert (tmp_path / "diffs.svg").read_bytes() == first
