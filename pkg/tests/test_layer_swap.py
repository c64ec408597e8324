import pytest
import torch

from cdsm import archive
from cdsm.errors import ConfigError
from cdsm.generator import GeneratorConfig, init_weights
from cdsm.layer_swap import (
    NEITHER,
    SOURCE,
    TARGET,
    audit_swap,
    expected_parent,
    provenance_report,
    swap_layers,
    tensor_resolution,
)


@pytest.fixture(scope="module")
def parents(cfg):
    return init_weights(cfg, 1), init_weights(cfg, 2)


@pytest.mark.parametrize("res", [64, 4, 2, 24])
def test_invalid_swap_resolution(parents, res):
    with pytest.raises(ConfigError):
        swap_layers(*parents, res)


def test_config_mismatch(cfg):
    with pytest.raises(ConfigError):
        swap_layers(init_weights(cfg, 0), init_weights(GeneratorConfig(output_resolution=16), 0), 8)


def test_same_parent_is_identity(parents):
    src, _ = parents
    out = swap_layers(src, src, 16)
    assert out.equal(src)
    assert set(provenance_report(out, src, src).values()) == {SOURCE}


def brute_force_expected(name, swap_res, inclusive=True):
    """Resolution read straight off the tensor name, independent of the table."""
    if name.startswith("mapping_"):
        return SOURCE
    if name == "const_input":
        res = 4
    else:
        res = int(name.split(".")[0].rsplit("_", 1)[1])
    hit = res >= swap_res if inclusive else res > swap_res
    return TARGET if hit else SOURCE


@pytest.mark.parametrize("inclusive", [True, False])
@pytest.mark.parametrize("swap_res", [8, 16, 32])
def test_swap_rule_against_name_oracle(parents, swap_res, inclusive):
    src, tgt = parents
    out = swap_layers(src, tgt, swap_res, inclusive=inclusive)
    for name, t in out.items():
        expected = brute_force_expected(name, swap_res, inclusive)
        assert expected == expected_parent(out, name, swap_res, inclusive)
        assert torch.equal(t, (src if expected == SOURCE else tgt)[name]), name


def test_inputs_not_modified_and_no_aliasing(parents):
    src, tgt = parents
    before = archive.to_bytes(src), archive.to_bytes(tgt)
    out = swap_layers(src, tgt, 16)
    out["trgb_32.bias"].add_(1.0)
    out["mapping_0.bias"].add_(1.0)
    assert (archive.to_bytes(src), archive.to_bytes(tgt)) == before


def test_noise_follows_layer(parents):
    src, tgt = parents
    out = swap_layers(src, tgt, 16)
    assert torch.equal(out["noise_conv1_16"], tgt["noise_conv1_16"])
    assert torch.equal(out["noise_conv1_8"], src["noise_conv1_8"])
    assert tensor_resolution(out, "noise_conv0_32") == 32


def test_provenance_report_and_archive(parents, tmp_path):
    src, tgt = parents
    out = swap_layers(src, tgt, 16)
    report = provenance_report(out, src, tgt)
    assert NEITHER not in report.values()
    assert all(report[n] == SOURCE for n in report if n.startswith("mapping_"))
    again = archive.load_weights(archive.save_weights(out, tmp_path / "s.cdsmw"))
    assert again.equal(out)


def test_blend_is_reported_as_neither(parents):
    src, tgt = parents
    out = swap_layers(src, tgt, 16)
    tensors = dict(out.tensors)
    tensors["conv1_32.weight"] = 0.5 * (src["conv1_32.weight"] + tgt["conv1_32.weight"])
    from cdsm.generator import GeneratorWeights

    assert provenance_report(GeneratorWeights(out.config, tensors), src, tgt)["conv1_32.weight"] == NEITHER


def test_swap_idempotent(parents):
    src, tgt = parents
    assert swap_layers(src, tgt, 16).equal(swap_layers(src, tgt, 16))
    assert swap_layers(swap_layers(src, tgt, 16), tgt, 16).equal(swap_layers(src, tgt, 16))


def test_audit_rows_cover_all_tensors(parents):
    src, tgt = parents
    rows = audit_swap(swap_layers(src, tgt, 16), src, tgt, 16)
    assert [r[0] for r in rows] == list(src.tensors)
