import numpy as np
import pytest

from tfcsr.data import LabeledDataset, TaskExperience
from tfcsr.errors import EmptyMemoryError
from tfcsr.memory import ReservoirBuffer
from tfcsr.rng import make_rng


def experience(task_id, labels, start=0):
    labels = np.asarray(labels)
    x = np.arange(start, start + len(labels), dtype=float)[:, None]
    ds = LabeledDataset(x, labels, int(labels.max()) + 1)
    return TaskExperience(task_id, tuple(sorted(set(labels.tolist()))), ds, ds)


def test_under_capacity_keeps_everything():
    buf = ReservoirBuffer(3, 0)
    buf.add_all(experience(0, [0, 1, 2]))
    assert buf.inputs[:, 0].tolist() == [0.0, 1.0, 2.0]
    assert buf.seen_count == 3


def test_capacity_never_exceeded():
    buf = ReservoirBuffer(10, 0)
    for i in range(500):
        buf.add([i], i % 3)
        assert len(buf) == min(buf.seen_count, 10)


def test_capacity_one_uniform():
    rng = make_rng(0, "buffer")
    counts = np.zeros(4)
    trials = 100_000
    for _ in range(trials):
        buf = ReservoirBuffer(1, rng)
        for i in range(4):
            buf.add(i, i)
        counts[buf.labels[0]] += 1
    assert np.all(np.abs(counts / trials - 0.25) <= 0.01)


def test_per_task_residency_within_three_sigma():
    buf = ReservoirBuffer(1000, 42)
    for t in range(5):
        buf.add_all(experience(t, np.repeat([2 * t, 2 * t + 1], 500), start=1000 * t))
    counts = np.bincount(buf.task_ids, minlength=5)
    # hypergeometric: 1000 drawn from 5000, 1000 of each task
    N, K, n = 5000, 1000, 1000
    sigma = np.sqrt(n * K / N * (1 - K / N) * (N - n) / (N - 1))
    assert np.all(np.abs(counts - 200) <= 3 * sigma)


def test_deterministic_resident_set():
    def fill():
        buf = ReservoirBuffer(20, 5)
        buf.add_all(experience(0, np.arange(300) % 7))
        return buf.inputs.tobytes()
    assert fill() == fill()


def test_sample_single_item_repeats():
    buf = ReservoirBuffer(5, 0)
    buf.add([3.0], 2)
    b = buf.sample(5, np.random.default_rng(0))
    assert b.targets.tolist() == [2] * 5 and b.inputs[:, 0].tolist() == [3.0] * 5


def test_sample_membership():
    buf = ReservoirBuffer(1000, 0)
    buf.add_all(experience(0, np.arange(3000) % 10))
    resident = set(buf.inputs[:, 0].tolist())
    b = buf.sample(32, np.random.default_rng(1))
    assert set(b.inputs[:, 0].tolist()) <= resident


def test_sample_uniform():
    buf = ReservoirBuffer(10, 0)
    buf.add_all(experience(0, np.arange(10)))
    b = buf.sample(100_000, make_rng(3, "sampling"))
    freq = np.bincount(b.targets, minlength=10) / 100_000
    assert np.all(np.abs(freq - 0.1) <= 0.01)


def test_sample_empty():
    with pytest.raises(EmptyMemoryError):
        ReservoirBuffer(3).sample(1, np.random.default_rng(0))


def test_classes_present():
    buf = ReservoirBuffer(10, 0)
    assert buf.classes_present() == set()
    for y in (0, 0, 3):
        buf.add([0.0], y)
    assert buf.classes_present() == {0, 3}


def test_classes_present_after_three_tasks():
    buf = ReservoirBuffer(10_000, 0)
    for t in range(3):
        buf.add_all(experience(t, np.repeat([2 * t, 2 * t + 1], 20)))
    assert buf.classes_present() == set(range(6))


@pytest.mark.parametrize("n,need,expected", [(0, 1, False), (32, 32, True), (31, 32, False)])
def test_is_sufficient(n, need, expected):
    buf = ReservoirBuffer(100, 0)
    for i in range(n):
        buf.add([i], 0)
    assert buf.is_sufficient(need) is expected


def test_snapshot():
    buf = ReservoirBuffer(4, 0)
    buf.add_all(experience(1, [0, 0, 1]))
    snap = buf.snapshot()
    assert snap == {"capacity": 4, "seen_count": 3, "size": 3,
                    "per_class": {"0": 2, "1": 1}, "per_task": {"1": 3}}
