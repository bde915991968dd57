import numpy as np
import pytest

from retcn import corrupt as C
from retcn.data import SkeletonDataset, SkeletonSequence
from retcn.errors import BadConfig, BadLength, BadProbability, JointOutOfRange
from retcn.tensor import make_rng

import oracles


def _seq(t=64, v=25, c=3, m=1):
    return SkeletonSequence(np.ones((c, t, v, m), np.float32), 0)


def test_trunk_zeroes_expected_count():
    d = _seq(t=20, v=25, c=3, m=2)
    out = C.occlude_part_eval(d, C.body_parts(C.NTU25_PARTS)["trunk"])
    assert (out.data == 0).sum() == 5 * 20 * 3 * 2


def test_part_out_of_range():
    with pytest.raises(JointOutOfRange):
        C.occlude_part_eval(_seq(v=10), C.BodyPart("trunk", (0, 20)))


def test_frame_block_start_is_uniform():
    d = _seq(t=64, v=1)
    starts = []
    for s in range(5500):
        out = C.occlude_frames_eval(make_rng(s), d, 10)
        runs = oracles.zero_runs((out.data[0, :, 0, 0] == 0))
        assert len(runs) == 1 and runs[0][1] == 10
        starts.append(runs[0][0])
    counts = np.bincount(starts, minlength=55)
    assert len(counts) == 55 and counts.min() > 0
    # chi-square against uniform on 0..54, 54 dof; 99.9% quantile is about 93
    expect = len(starts) / 55
    assert ((counts - expect) ** 2 / expect).sum() < 93
    with pytest.raises(BadLength):
        C.occlude_frames_eval(make_rng(0), d, 65)


def test_random_occlusion_rate_and_independence():
    d = _seq(t=200, v=25)
    out = C.occlude_random_eval(make_rng(0), d, 0.3)
    z = (out.data[0, :, :, 0] == 0).astype(np.float64)
    se = np.sqrt(0.3 * 0.7 / z.size)
    assert abs(z.mean() - 0.3) < 3 * se
    # neighbouring joints are hit independently
    corr = np.corrcoef(z[:, :-1].ravel(), z[:, 1:].ravel())[0, 1]
    assert abs(corr) < 0.02 + 3 / np.sqrt(z[:, 1:].size)
    with pytest.raises(BadProbability):
        C.occlude_random_eval(make_rng(0), d, 1.2)


def test_jitter_eval_zero_level_is_copy():
    d = _seq()
    out = C.jitter_eval(make_rng(0), d, 0.0, 0.1)
    np.testing.assert_array_equal(out.data, d.data)
    assert out.data is not d.data


def test_corrupt_dataset_errors(small_ds):
    with pytest.raises(BadConfig):
        C.corrupt_dataset(small_ds, "blur", 1, make_rng(0))
    with pytest.raises(BadConfig):
        C.corrupt_dataset(small_ds, "part", "tail", make_rng(0))
    bare = SkeletonDataset(small_ds.data, small_ds.labels, small_ds.num_classes)
    with pytest.raises(BadConfig):
        C.corrupt_dataset(bare, "part", "trunk", make_rng(0))


CHANCE_FLOOR = pytest.mark.xfail(strict=False, reason=(
    "the un-augmented model is at chance from the first random-occlusion level on, so later "
    "steps are sampling noise around 0.25 rather than a trend"))


@pytest.mark.slow
@pytest.mark.parametrize("protocol", ["frame", "jitter", pytest.param("random", marks=CHANCE_FLOOR)])
def test_sweep_monotone_in_most_steps(default_run, synth_ds, protocol):
    model = default_run[0].best
    table = C.robustness_sweep(model, synth_ds.val_split(), protocol, seed=0)
    acc = table.accuracies()
    steps = sum(b <= a for a, b in zip(acc, acc[1:]))
    assert len(table.to_records()) == len(C.DEFAULT_GRIDS[protocol])
    assert table.to_text().startswith(f"# protocol={protocol} seed=0")
    assert steps >= 4, acc


@pytest.mark.slow
def test_part_sweep_on_synthetic_parts(default_run, synth_ds):
    table = C.robustness_sweep(default_run[0].best, synth_ds.val_split(), "part",
                               grid=["none"] + sorted(synth_ds.parts))
    assert table.rows[0].accuracy == pytest.approx(default_run[0].best_val_accuracy)
