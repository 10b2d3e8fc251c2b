import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctssg.errors import DimensionError, ValidationError
from ctssg.metrics import macro_f1
from ctssg.synth import (
    LabelSpec,
    SynthConfig,
    add_noise,
    generate,
    generate_one,
    load_dataset,
    matched_filter_labels,
    matched_filter_scores,
    read_volume,
    render_pattern,
    save_dataset,
    write_volume,
    z_translate,
)


@pytest.fixture(scope="module")
def bench():
    cfg = SynthConfig()
    return cfg, generate(cfg, 500)


def test_volumes_in_unit_range_and_float32_exact(bench):
    _, ds = bench
    assert ds.volumes.shape == (500, 24, 32, 32)
    assert ds.volumes.min() >= 0 and ds.volumes.max() <= 1
    np.testing.assert_array_equal(ds.volumes.astype(np.float32).astype(np.float64), ds.volumes)


def test_generation_is_pure_in_seed_and_index():
    cfg = SynthConfig(seed=3)
    a, la = generate_one(cfg, 17)
    b, lb = generate_one(cfg, 17)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(la, lb)
    # a window starting elsewhere reproduces the same volume
    ds = generate(cfg, 3, start=16)
    np.testing.assert_array_equal(ds.volumes[1], a)
    assert not np.array_equal(generate_one(SynthConfig(seed=4), 17)[0], a)


def test_matched_filter_oracle_separates(bench):
    cfg, ds = bench
    scores = np.stack([matched_filter_scores(v, cfg) for v in ds.volumes])
    pred = np.stack([matched_filter_labels(v, cfg) for v in ds.volumes])
    assert macro_f1(pred.astype(float), ds.labels) >= 0.99
    # a planted pattern exists iff its label is on
    pos, neg = scores[ds.labels == 1], scores[ds.labels == 0]
    assert pos.min() > neg.max()


def test_prevalence_extremes():
    labels = (LabelSpec((0, 4), "blob", 0.35, 0.0), LabelSpec((4, 8), "alternating_intensity", 0.2, 1.0))
    cfg = SynthConfig(labels=labels)
    ds = generate(cfg, 40)
    assert np.all(ds.labels[:, 0] == 0) and np.all(ds.labels[:, 1] == 1)


def test_empirical_prevalence_near_target(bench):
    _, ds = bench
    np.testing.assert_allclose(ds.labels.mean(axis=0), 0.4, atol=0.07)


def test_correlated_labels_follow_matrix():
    R = [[1, 0.9, 0, 0], [0.9, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]
    ds = generate(SynthConfig(correlation=R), 600)
    c = np.corrcoef(ds.labels.T)
    assert c[0, 1] > 0.5 and abs(c[0, 2]) < 0.15


def test_alternating_pattern_hides_in_single_slice_means():
    cfg = SynthConfig()
    spec = LabelSpec((2, 4), "alternating_intensity", 0.2, 0.5)
    off = render_pattern(spec, cfg, np.random.default_rng(0))
    per_slice = off.reshape(24, -1).sum(axis=1)
    nz = per_slice[per_slice != 0]
    # opposite signs on consecutive slices, cancelling in aggregate
    assert len(nz) >= 6 and np.all(np.sign(nz[1:]) == -np.sign(nz[:-1]))
    assert abs(per_slice.sum()) < 1e-12


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_slices=25),
        dict(labels=(LabelSpec((0, 9)),)),
        dict(labels=(LabelSpec((3, 4), "multi_slice_gradient"),)),
        dict(labels=(LabelSpec((0, 2), "spiral"),)),
        dict(labels=(LabelSpec((0, 2), prevalence=1.5),)),
        dict(labels=(LabelSpec((0, 2), amplitude=0.01),)),
        dict(patch=64),
        dict(correlation=[[1, 2], [2, 1]]),
    ],
)
def test_invalid_configs_rejected(kwargs):
    with pytest.raises(ValidationError):
        SynthConfig(**kwargs)


def test_negative_count_rejected():
    with pytest.raises(ValidationError):
        generate(SynthConfig(), -1)


# perturbations

def test_z_translate_cases():
    v = np.random.default_rng(0).uniform(0.2, 1.0, size=(24, 4, 4))
    np.testing.assert_array_equal(z_translate(v, 0), v)
    far = z_translate(v, 23)
    assert np.all(far[:23] == v.min()) and np.array_equal(far[23], v[0])
    back = z_translate(z_translate(v, 3), -3)
    np.testing.assert_array_equal(back[:21], v[:21])
    assert np.all(back[21:] == v.min())
    for bad in (24, -24, 40):
        with pytest.raises(ValidationError):
            z_translate(v, bad)


@settings(max_examples=50, deadline=None)
@given(st.integers(-11, 11), st.integers(0, 2**16))
def test_z_translate_preserves_extents_and_values(shift, seed):
    v = np.random.default_rng(seed).uniform(size=(12, 3, 3))
    out = z_translate(v, shift)
    assert out.shape == v.shape
    kept = v[: 12 - shift] if shift >= 0 else v[-shift:]
    body = out[shift:] if shift >= 0 else out[:shift]
    np.testing.assert_array_equal(np.sort(body, axis=None), np.sort(kept, axis=None))


def test_add_noise_statistics():
    v = np.full((100, 100, 100), 0.5)
    for sigma in (0.01, 0.04, 0.07):
        d = add_noise(v, sigma, seed=1) - v
        assert abs(d.std() / sigma - 1) < 0.05
    np.testing.assert_array_equal(add_noise(v, 0.0, 5), v)
    np.testing.assert_array_equal(add_noise(v[:4], 0.03, 9), add_noise(v[:4], 0.03, 9))
    assert not np.array_equal(add_noise(v[:4], 0.03, 9), add_noise(v[:4], 0.03, 10))
    with pytest.raises(ValidationError):
        add_noise(v, -0.01, 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 0.5), st.integers(0, 1000))
def test_add_noise_stays_in_unit_range(sigma, seed):
    v = np.random.default_rng(seed).uniform(size=(3, 5, 5))
    out = add_noise(v, sigma, seed)
    assert out.shape == v.shape and out.min() >= 0 and out.max() <= 1


# disk format

def test_volume_round_trip_and_header(tmp_path):
    v = generate_one(SynthConfig(), 0)[0]
    write_volume(tmp_path / "v.bin", v)
    raw = (tmp_path / "v.bin").read_bytes()
    assert raw[:4] == b"CTSV" and np.frombuffer(raw[4:16], "<u4").tolist() == [24, 32, 32]
    assert len(raw) == 16 + 4 * v.size
    np.testing.assert_array_equal(read_volume(tmp_path / "v.bin"), v)
    (tmp_path / "bad.bin").write_bytes(raw[:-4])
    with pytest.raises(DimensionError):
        read_volume(tmp_path / "bad.bin")


def test_dataset_round_trip_is_byte_identical(tmp_path):
    cfg = SynthConfig(seed=2)
    ds = generate(cfg, 5)
    save_dataset(ds, tmp_path / "a", cfg)
    save_dataset(generate(cfg, 5), tmp_path / "b", cfg)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    back = load_dataset(tmp_path / "a")
    np.testing.assert_array_equal(back.volumes, ds.volumes)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.indices, ds.indices)


def test_empty_dataset(tmp_path):
    cfg = SynthConfig()
    save_dataset(generate(cfg, 0), tmp_path, cfg)
    back = load_dataset(tmp_path)
    assert len(back) == 0 and back.labels.shape == (0, 4)
