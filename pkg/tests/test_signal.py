import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpd_forge.signal import (IqSample, IqSequence, frame_sequence, read_dataset_dir, read_iq_csv,
                              split_dataset, split_lengths, write_dataset_dir, write_iq_csv)


def ramp(n, fs=800e6):
    k = np.arange(n, dtype=float)
    return IqSequence(np.stack([k, -k], axis=1), fs)


def test_sequence_rejects_bad_input():
    with pytest.raises(ValueError):
        IqSequence(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        IqSequence(np.array([[0.0, np.nan]]))
    with pytest.raises(ValueError):
        IqSequence(np.zeros((3, 2)), sample_rate_hz=0.0)
    with pytest.raises(ValueError):
        IqSequence(np.zeros((3, 3)))


def test_complex_round_trip_and_samples():
    z = np.array([1 + 2j, -3.5 + 0.25j])
    seq = IqSequence.from_complex(z)
    np.testing.assert_array_equal(seq.to_complex(), z)
    assert seq[1] == IqSample(-3.5, 0.25)
    assert list(seq) == [IqSample(1.0, 2.0), IqSample(-3.5, 0.25)]


@pytest.mark.parametrize("n,t,s,starts", [
    (5, 3, 1, [0, 1, 2]),
    (6, 3, 2, [0, 2]),
])
def test_frame_starts(n, t, s, starts):
    x = ramp(n)
    fd = frame_sequence(x, x, t, s)
    assert list(fd.start_indices) == starts
    for k, start in enumerate(starts):
        np.testing.assert_array_equal(fd.inputs[k], x.iq[start:start + t])


def test_frame_count_paper_scale():
    x = ramp(38400)
    assert len(frame_sequence(x, x, 50, 1)) == 38351


def test_frame_objects_carry_targets():
    x, y = ramp(7), ramp(7).scaled(2.0)
    frames = frame_sequence(x, y, 4, 3).frames
    assert [f.start_index for f in frames] == [0, 3]
    np.testing.assert_array_equal(frames[1].target, y.iq[3:7])


def test_frame_errors():
    x = ramp(5)
    with pytest.raises(ValueError):
        frame_sequence(x, ramp(4), 2, 1)
    with pytest.raises(ValueError):
        frame_sequence(x, x, 6, 1)
    with pytest.raises(ValueError):
        frame_sequence(x, x, 3, 0)
    with pytest.raises(ValueError):
        frame_sequence(x, x, 2, 3)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 80), t=st.integers(1, 20), s=st.integers(1, 20))
def test_frame_round_trip(n, t, s):
    if not s <= t <= n:
        return
    x = ramp(n)
    fd = frame_sequence(x, x, t, s)
    assert len(fd) == (n - t) // s + 1
    # first S samples of each frame plus the last frame's tail rebuild the covered region
    rebuilt = np.concatenate([fd.inputs[k, :s] for k in range(len(fd) - 1)] + [fd.inputs[-1]])
    covered = (len(fd) - 1) * s + t
    np.testing.assert_array_equal(rebuilt, x.iq[:covered])
    if len(fd) > 1:
        np.testing.assert_array_equal(fd.inputs[0, s:], fd.inputs[1, :t - s])


@pytest.mark.parametrize("n,expected", [(38400, (23040, 7680, 7680)), (10, (6, 2, 2)), (11, (6, 2, 3))])
def test_split_lengths(n, expected):
    assert split_lengths(n, (0.6, 0.2, 0.2)) == expected
    x = ramp(n)
    split = split_dataset(x, x)
    assert tuple(len(p[0]) for p in (split.train, split.validation, split.test)) == expected


def test_split_is_contiguous_and_ordered():
    x, y = ramp(11), ramp(11).scaled(-1.0)
    split = split_dataset(x, y)
    joined = np.concatenate([split.train[0].iq, split.validation[0].iq, split.test[0].iq])
    np.testing.assert_array_equal(joined, x.iq)
    np.testing.assert_array_equal(split.test[1].iq, y.iq[8:])
    assert split.bounds == (0, 6, 8, 11)


def test_split_errors():
    x = ramp(10)
    with pytest.raises(ValueError):
        split_dataset(x, x, (0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        split_dataset(ramp(2), ramp(2))
    with pytest.raises(ValueError):
        split_dataset(x, ramp(9))


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    seq = IqSequence(rng.normal(size=(17, 2)))
    write_iq_csv(tmp_path / "a.csv", seq)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "I,Q"
    np.testing.assert_array_equal(read_iq_csv(tmp_path / "a.csv").iq, seq.iq)


def test_csv_rejects_bad_header(tmp_path):
    (tmp_path / "b.csv").write_text("x,y\n1,2\n")
    with pytest.raises(ValueError):
        read_iq_csv(tmp_path / "b.csv")


def test_dataset_dir_round_trip(tmp_path):
    x = ramp(20)
    split = split_dataset(x, x.scaled(3.0))
    write_dataset_dir(tmp_path, split)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == sorted(f"{s}_{k}.csv" for s in ("train", "val", "test") for k in ("input", "output"))
    back = read_dataset_dir(tmp_path)
    assert back.bounds == split.bounds
    np.testing.assert_array_equal(back.test[1].iq, split.test[1].iq)
