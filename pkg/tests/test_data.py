import numpy as np
import pytest

from lrco.data import (
    AugmentSpec, BenchmarkSpec, Sample, batch_iter, benchmark_spec_hash,
    generate_shift_benchmark, load_dataset, pack_inputs, pack_labels,
    save_dataset, strong_augment, weak_augment,
)
from lrco.errors import DatasetFormatError
from lrco.numerics import SeededRng

# The measured accuracy drop of a source-fit nearest-centroid classifier on the
# shifted target, median over seeds 0..4 of the default 2-D benchmark.  A
# regenerated benchmark must keep showing at least a 10-point drop.
NEAREST_CENTROID_SHIFT_DROP_PTS = 99.33333333333333


def nearest_centroid_accuracy(train, test):
    train_x, train_y = pack_inputs(train), pack_labels(train)
    test_x, test_y = pack_inputs(test), pack_labels(test)
    k = int(train_y.max()) + 1
    centroids = np.stack([train_x[train_y == c].mean(axis=0) for c in range(k)])
    d2 = ((test_x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == test_y).mean())


# --- spec validation and hashing ----------------------------------------------

def test_spec_validation():
    BenchmarkSpec().validate()
    with pytest.raises(ValueError):
        BenchmarkSpec(n_classes=1).validate()
    with pytest.raises(ValueError):
        BenchmarkSpec(input_dim=1).validate()
    with pytest.raises(ValueError):
        BenchmarkSpec(input_dim=4, n_classes=6).validate()  # needs K <= dim above 2-D
    with pytest.raises(ValueError):
        BenchmarkSpec(noise_sigma=-0.1).validate()
    with pytest.raises(ValueError):
        BenchmarkSpec(noise_sigma=0.0).validate()  # zero noise is degenerate too
    with pytest.raises(ValueError):
        BenchmarkSpec(shift_translation=(1.0,)).validate()  # wrong length


def test_spec_hash_stable_and_sensitive():
    a = benchmark_spec_hash(BenchmarkSpec())
    b = benchmark_spec_hash(BenchmarkSpec())
    assert a == b and len(a) == 12
    assert benchmark_spec_hash(BenchmarkSpec(seed=1)) != a
    assert benchmark_spec_hash(BenchmarkSpec(noise_sigma=0.2)) != a


# --- geometry -------------------------------------------------------------------

def test_centers_on_circle_2d():
    bench = generate_shift_benchmark(BenchmarkSpec(n_classes=4, radius=2.0))
    np.testing.assert_allclose(np.linalg.norm(bench.source_centers, axis=1),
                               np.full(4, 2.0), atol=1e-12)
    # equal angular spacing: consecutive dot products all equal
    dots = [bench.source_centers[i] @ bench.source_centers[(i + 1) % 4]
            for i in range(4)]
    np.testing.assert_allclose(dots, dots[0], atol=1e-12)


def test_centers_orthonormal_high_dim():
    bench = generate_shift_benchmark(BenchmarkSpec(n_classes=5, input_dim=6))
    gram = bench.source_centers @ bench.source_centers.T
    np.testing.assert_allclose(gram, np.eye(5), atol=1e-10)


def test_target_centers_are_rotated():
    spec = BenchmarkSpec(shift_angle_deg=90.0)
    bench = generate_shift_benchmark(spec)
    # 90 degrees in 2-D: (x, y) -> (-y, x)
    expected = np.stack([-bench.source_centers[:, 1], bench.source_centers[:, 0]],
                        axis=1)
    np.testing.assert_allclose(bench.target_centers, expected, atol=1e-12)


def test_translation_applied():
    spec = BenchmarkSpec(shift_angle_deg=0.0, shift_translation=(3.0, -1.0))
    bench = generate_shift_benchmark(spec)
    np.testing.assert_allclose(bench.target_centers,
                               bench.source_centers + np.array([3.0, -1.0]),
                               atol=1e-12)


def test_split_sizes_and_domains():
    spec = BenchmarkSpec(n_classes=3, n_per_class_source=10, n_per_class_target=8,
                         n_labeled_target_per_class=2)
    bench = generate_shift_benchmark(spec)
    assert len(bench.source) == 30
    assert len(bench.target_unlabeled) == 24
    assert len(bench.target_labeled) == 6
    assert all(s.domain == "source" and s.label is not None for s in bench.source)
    assert all(s.label is None for s in bench.target_unlabeled)
    assert all(s.domain == "target" and s.label is not None
               for s in bench.target_labeled)
    assert len(bench.labeled_pool()) == 36


def test_eval_channel_restores_labels():
    bench = generate_shift_benchmark(BenchmarkSpec(n_classes=3, n_per_class_target=5))
    eval_samples = bench.target_eval_samples()
    assert len(eval_samples) == len(bench.target_unlabeled)
    labels = pack_labels(eval_samples)
    assert set(labels.tolist()) == {0, 1, 2}
    # same points, same order
    np.testing.assert_array_equal(pack_inputs(eval_samples),
                                  pack_inputs(bench.target_unlabeled))


def test_generation_is_deterministic():
    a = generate_shift_benchmark(BenchmarkSpec(seed=7))
    b = generate_shift_benchmark(BenchmarkSpec(seed=7))
    np.testing.assert_array_equal(pack_inputs(a.source), pack_inputs(b.source))
    np.testing.assert_array_equal(pack_inputs(a.target_unlabeled),
                                  pack_inputs(b.target_unlabeled))
    c = generate_shift_benchmark(BenchmarkSpec(seed=8))
    assert not np.array_equal(pack_inputs(a.source), pack_inputs(c.source))


def test_zero_shift_means_matched_domains():
    spec = BenchmarkSpec(shift_angle_deg=0.0)
    bench = generate_shift_benchmark(spec)
    np.testing.assert_allclose(bench.target_centers, bench.source_centers, atol=1e-12)
    acc_src = nearest_centroid_accuracy(bench.source, bench.source)
    acc_tgt = nearest_centroid_accuracy(bench.source, bench.target_eval_samples())
    assert abs(acc_src - acc_tgt) < 0.02  # within 2 points when nothing shifted


def test_shift_hurts_source_fit_classifier():
    # the benchmark has to actually pose an adaptation problem
    drops = []
    for seed in range(5):
        bench = generate_shift_benchmark(BenchmarkSpec(seed=seed))
        acc_src = nearest_centroid_accuracy(bench.source, bench.source)
        acc_tgt = nearest_centroid_accuracy(bench.source, bench.target_eval_samples())
        drops.append(100.0 * (acc_src - acc_tgt))
    median_drop = float(np.median(drops))
    assert median_drop >= 10.0
    assert abs(median_drop - NEAREST_CENTROID_SHIFT_DROP_PTS) < 15.0


# --- augmentation ----------------------------------------------------------------

def test_weak_augment_zero_sigma_identity():
    spec = AugmentSpec(sigma_weak=0.0)
    x = np.array([1.0, -2.0, 3.0])
    out = weak_augment(x, spec, SeededRng(0).substream("w"))
    np.testing.assert_array_equal(out, x)


def test_weak_augment_noise_scale():
    spec = AugmentSpec(sigma_weak=0.05)
    rng = SeededRng(1).substream("w")
    x = np.zeros((100_000, 1))
    out = weak_augment(x, spec, rng)
    assert abs(out.std() - 0.05) < 0.05 * 0.05  # within 5 percent


def test_weak_augment_deterministic_per_stream():
    spec = AugmentSpec()
    x = np.arange(6, dtype=np.float64).reshape(2, 3)
    a = weak_augment(x, spec, SeededRng(5).substream("aug-3"))
    b = weak_augment(x, spec, SeededRng(5).substream("aug-3"))
    np.testing.assert_array_equal(a, b)
    c = weak_augment(x, spec, SeededRng(5).substream("aug-4"))
    assert not np.array_equal(a, c)


def test_strong_augment_masks_and_scales():
    spec = AugmentSpec(sigma_strong=0.0, sigma_weak=0.0, mask_prob=0.5,
                       scale_jitter=0.0)
    rng = SeededRng(2).substream("s")
    x = np.ones((2000, 4))
    out = strong_augment(x, spec, rng)
    zero_frac = float((out == 0.0).mean())
    assert abs(zero_frac - 0.5) < 0.03
    assert set(np.unique(out)).issubset({0.0, 1.0})


def test_strong_augment_scale_jitter_rowwise():
    spec = AugmentSpec(sigma_strong=0.0, sigma_weak=0.0, mask_prob=0.0,
                       scale_jitter=0.1)
    rng = SeededRng(3).substream("s")
    x = np.ones((50, 3))
    out = strong_augment(x, spec, rng)
    # each row scaled by a single factor in [0.9, 1.1]
    row_factors = out[:, 0]
    np.testing.assert_allclose(out, row_factors[:, None] * np.ones((50, 3)),
                               atol=1e-15)
    assert np.all(row_factors >= 0.9) and np.all(row_factors <= 1.1)
    assert np.std(row_factors) > 0.0


def test_strong_augment_more_aggressive_than_weak():
    spec = AugmentSpec()
    x = np.ones((20_000, 2))
    weak = weak_augment(x, spec, SeededRng(4).substream("w"))
    strong = strong_augment(x, spec, SeededRng(4).substream("s"))
    assert np.mean((strong - x) ** 2) > np.mean((weak - x) ** 2)


def test_augment_spec_validation():
    AugmentSpec().validate()
    with pytest.raises(ValueError):
        AugmentSpec(sigma_weak=-0.1).validate()
    with pytest.raises(ValueError):
        AugmentSpec(sigma_weak=0.3, sigma_strong=0.1).validate()
    with pytest.raises(ValueError):
        AugmentSpec(mask_prob=1.0).validate()


# --- batching ---------------------------------------------------------------------

def test_batch_iter_covers_epoch_once():
    samples = [Sample(x=np.array([float(i)]), label=0, domain="source")
               for i in range(23)]
    batches = list(batch_iter(samples, 5, SeededRng(0).substream("b")))
    assert [len(b) for b in batches] == [5, 5, 5, 5, 3]
    seen = sorted(float(s.x[0]) for b in batches for s in b)
    assert seen == [float(i) for i in range(23)]


def test_batch_iter_shuffles():
    samples = [Sample(x=np.array([float(i)]), label=0, domain="source")
               for i in range(40)]
    flat = [s.x[0] for b in batch_iter(samples, 8, SeededRng(1).substream("b"))
            for s in b]
    assert flat != [float(i) for i in range(40)]


def test_batch_iter_rejects_bad_size():
    with pytest.raises(ValueError):
        list(batch_iter([], 0, SeededRng(0)))


# --- dataset files -----------------------------------------------------------------

def test_save_load_roundtrip_exact(tmp_path):
    bench = generate_shift_benchmark(BenchmarkSpec(n_classes=3, n_per_class_source=4,
                                                   n_per_class_target=4))
    path = tmp_path / "mixed.txt"
    samples = bench.source + bench.target_unlabeled
    save_dataset(path, samples, input_dim=2, n_classes=3, spec_hash="abc123")
    loaded, meta = load_dataset(path)
    assert meta == {"input_dim": 2, "n_classes": 3, "spec_hash": "abc123"}
    assert len(loaded) == len(samples)
    for orig, back in zip(samples, loaded):
        assert back.domain == orig.domain
        assert back.label == orig.label
        np.testing.assert_array_equal(back.x, orig.x)  # 17 digits: bit-exact


def test_empty_sample_list_roundtrips(tmp_path):
    # A header-only file is a legitimate dataset with zero samples; only a
    # file with no header at all is malformed.
    path = tmp_path / "none.txt"
    save_dataset(path, [], input_dim=3, n_classes=2)
    loaded, meta = load_dataset(path)
    assert loaded == []
    assert meta["input_dim"] == 3 and meta["n_classes"] == 2


def test_save_is_byte_deterministic(tmp_path):
    bench = generate_shift_benchmark(BenchmarkSpec(n_per_class_source=2,
                                                   n_per_class_target=2))
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    save_dataset(p1, bench.source, input_dim=2, n_classes=5)
    save_dataset(p2, bench.source, input_dim=2, n_classes=5)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("input_dim=2,K=3\nsource,0,1.0,2.0\nsource,0,1.0\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load_dataset(path)

    path.write_text("input_dim=2,K=3\nmoon,0,1.0,2.0\n")
    with pytest.raises(DatasetFormatError, match="line 2: field 1"):
        load_dataset(path)

    path.write_text("input_dim=2,K=3\nsource,9,1.0,2.0\n")
    with pytest.raises(DatasetFormatError, match="label 9 outside 0..2"):
        load_dataset(path)

    path.write_text("input_dim=2,K=3\nsource,0,1.0,zap\n")
    with pytest.raises(DatasetFormatError, match="line 2: field 4: bad float"):
        load_dataset(path)

    path.write_text("")
    with pytest.raises(DatasetFormatError, match="line 1"):
        load_dataset(path)

    path.write_text("K=3\n")
    with pytest.raises(DatasetFormatError, match="line 1"):
        load_dataset(path)


def test_load_unlabeled_dash(tmp_path):
    path = tmp_path / "u.txt"
    path.write_text("input_dim=2,K=3\ntarget,-,0.5,0.25\n")
    samples, _ = load_dataset(path)
    assert samples[0].label is None
    assert samples[0].domain == "target"


def test_pack_helpers():
    samples = [Sample(x=np.array([1.0, 2.0]), label=1, domain="source"),
               Sample(x=np.array([3.0, 4.0]), label=0, domain="source")]
    np.testing.assert_array_equal(pack_inputs(samples), [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(pack_labels(samples), [1, 0])
    with pytest.raises(ValueError):
        pack_labels([Sample(x=np.zeros(2), label=None, domain="target")])
