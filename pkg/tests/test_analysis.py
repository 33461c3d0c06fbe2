import numpy as np
import pytest

from cgc.analysis import (REFERENCE_FRAC_IMAGENET, class_mean_kernels, default_layer, distance_stats,
                          export_stats, gate_stats, read_stats, sample_kernels)
from cgc.arch import load_arch, strip_cgc
from cgc.data import Dataset, synth_dataset
from cgc.nn import init_model


@pytest.fixture(scope="module")
def model():
    """Tiny network with randomized gate-path norms so kernels vary per sample."""
    m = init_model(load_arch("tiny"), 0, zero_gate=False)
    rng = np.random.default_rng(1)
    for lay in m.cgc_layers():
        for _, norm in lay.cgc.norms():
            norm.gamma.data = 1 + 0.5 * rng.standard_normal(norm.size)
            norm.beta.data = 0.5 * rng.standard_normal(norm.size)
    return m


@pytest.fixture(scope="module")
def data():
    return synth_dataset(0, 4, 48)


def test_default_layer_is_deepest(model):
    assert default_layer(model) == "s3.conv2"
    with pytest.raises(ValueError):
        default_layer(init_model(strip_cgc(load_arch("tiny"))))


def test_layer_must_be_cgc(model, data):
    with pytest.raises(ValueError, match="not a CGC"):
        sample_kernels(model, data, "s1.bn1")


def test_kernel_shape_and_variation(model, data):
    k = sample_kernels(model, data, "s1.conv1")
    assert k.shape == (48, 16 * 3 * 9)
    assert not np.allclose(k[0], k[1])


def test_identical_samples_give_identical_means(model):
    x = np.repeat(synth_dataset(0, 4, 4).inputs[:1], 8, axis=0)
    data = Dataset(x, np.arange(8) % 4, 4)
    stats = gate_stats(model, data)
    assert np.all(stats.intra == 0)
    assert np.all(stats.class_means == stats.class_means[0])
    assert np.all(stats.inter == 0)


def test_two_sample_mean(model, data):
    pair = Dataset(data.inputs[:2], [0, 0], 1)
    k = sample_kernels(model, pair)
    np.testing.assert_allclose(class_mean_kernels(model, pair)[0], (k[0] + k[1]) / 2, rtol=0, atol=1e-15)


def test_recomputation_bit_identical(model, data):
    assert np.array_equal(sample_kernels(model, data), sample_kernels(model, data))


def test_batch_size_does_not_matter(model, data):
    # eval mode uses running statistics, so kernels are per-sample quantities
    np.testing.assert_allclose(sample_kernels(model, data, batch_size=5), sample_kernels(model, data),
                               rtol=0, atol=1e-12)


def test_empty_class_listed(model, data):
    lonely = Dataset(data.inputs[:3], [0, 0, 2], 4)
    with pytest.raises(ValueError, match=r"\[1, 3\]"):
        class_mean_kernels(model, lonely)


def test_one_sample_per_class():
    means = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]])
    stats = distance_stats(means, means, [0, 1, 2])
    assert np.all(stats.intra == 0)
    assert stats.frac_inter_gt_intra == 1.0


def test_distance_two_construction():
    means = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    offsets = np.array([[0.0, 0.5, 0.0], [0.0, -0.5, 0.0], [0.0, 0.0, 0.5]])
    samples = np.concatenate([means[0] + offsets, means[1] + offsets])
    stats = distance_stats(means, samples, [0, 0, 0, 1, 1, 1])
    np.testing.assert_allclose(stats.intra, [0.5, 0.5])
    np.testing.assert_allclose(stats.inter, [[0, 2], [2, 0]])
    np.testing.assert_allclose(stats.diff, [[-0.5, 1.5], [1.5, -0.5]])
    assert stats.frac_inter_gt_intra == 1.0


def test_row_class_correspondence():
    # class 0 is tight, class 1 is spread wider than the gap: only the (0, 1) ordered pair counts
    means = np.array([[0.0], [1.0]])
    samples = np.array([[0.0], [0.0], [-1.0], [3.0]])
    stats = distance_stats(means, samples, [0, 0, 1, 1])
    assert stats.intra.tolist() == [0.0, 2.0]
    assert stats.frac_inter_gt_intra == 0.5


def test_needs_two_classes():
    with pytest.raises(ValueError):
        distance_stats(np.zeros((1, 3)), np.zeros((2, 3)), [0, 0])


def test_invariants_and_order(model, data):
    stats = gate_stats(model, data)
    np.testing.assert_array_equal(stats.inter, stats.inter.T)
    assert np.all(np.diag(stats.inter) == 0) and np.all(stats.intra >= 0)
    perm = np.random.default_rng(3).permutation(len(data))
    shuffled = gate_stats(model, data.subset(perm))
    np.testing.assert_allclose(shuffled.inter, stats.inter, rtol=0, atol=1e-12)
    np.testing.assert_allclose(shuffled.intra, stats.intra, rtol=0, atol=1e-12)


def test_export_round_trip(model, data, tmp_path):
    stats = gate_stats(model, data)
    path = tmp_path / "gates.csv"
    export_stats(stats, path)
    back = read_stats(path)
    assert np.array_equal(back["inter"], stats.inter)
    assert np.array_equal(back["intra"], stats.intra)
    assert np.array_equal(back["diff"], stats.diff)
    assert back["diff"].shape == (4, 4)
    summary = path.read_text().strip().splitlines()[-1]
    assert summary == f"classes=4,frac_inter_gt_intra={stats.frac_inter_gt_intra:.4f}"
    assert len(summary.split("=")[-1].split(".")[1]) == 4


def test_export_io_error(model, data, tmp_path):
    with pytest.raises(OSError):
        export_stats(gate_stats(model, data), tmp_path / "missing" / "gates.csv")


def test_reference_value_recorded():
    assert REFERENCE_FRAC_IMAGENET == 0.9399
