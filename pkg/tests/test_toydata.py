import pytest

from cdsm.errors import ConfigError
from cdsm.toydata import ToyDatasetSpec, generate_dataset, mean_unique_colors, stack_images, unique_colors


def test_deterministic_and_shaped():
    spec = ToyDatasetSpec("cartoonish", count=6, seed=4)
    a, b = generate_dataset(spec), generate_dataset(spec)
    assert all(x.image.equal(y.image) and x.label == y.label for x, y in zip(a, b))
    assert stack_images(a).shape == (6, 3, 32, 32)
    assert float(stack_images(a).abs().max()) <= 1.0


def test_empty_and_invalid():
    assert generate_dataset(ToyDatasetSpec(count=0)) == []
    assert mean_unique_colors([]) == 0.0
    for bad in ({"domain": "photo"}, {"count": -1}, {"num_characters": 2}, {"resolution": 4}):
        with pytest.raises(ConfigError):
            ToyDatasetSpec(**bad)


def test_cartoon_labels_cycle():
    samples = generate_dataset(ToyDatasetSpec("cartoonish", count=8, num_characters=4))
    assert [s.label for s in samples[:4]] == ["aoi", "beni", "kiro", "midori"]
    assert len({s.name for s in samples}) == 8


def test_cartoons_have_far_fewer_colors_than_faces(cartoon_samples, face_samples):
    cartoon = mean_unique_colors(s.image for s in cartoon_samples)
    face = mean_unique_colors(s.image for s in face_samples)
    assert cartoon < 32 and face > 200
    assert all(unique_colors(s.image) < 32 for s in cartoon_samples)


def test_flat_fill_override_adds_colors():
    flat = generate_dataset(ToyDatasetSpec("cartoonish", count=4))
    noisy = generate_dataset(ToyDatasetSpec("cartoonish", count=4, flat_fill=False))
    assert mean_unique_colors(s.image for s in noisy) > mean_unique_colors(s.image for s in flat)
