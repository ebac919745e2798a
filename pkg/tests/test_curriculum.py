import numpy as np
import pytest

from accentlab import curriculum
from accentlab.corpus import Utterance


def utt(n_words, uid=None):
    return Utterance(uid or f"u{n_words}", "spk", "en-US", n_words,
                     embeddings=object())


def test_bucket_assignment_frozen_cases():
    plan = curriculum.assign_buckets([])
    assert plan.subset_of(utt(25)) == 1
    assert plan.subset_of(utt(21)) == 1
    assert plan.subset_of(utt(20)) == 2
    assert plan.subset_of(utt(11)) == 2
    assert plan.subset_of(utt(10)) == 3
    assert plan.subset_of(utt(3)) == 3
    assert plan.subset_of(utt(2)) == 4
    assert plan.subset_of(utt(1)) == 4


def test_bucket_label():
    assert curriculum.bucket_label((21, None)) == "21+"
    assert curriculum.bucket_label((3, 10)) == "3-10"


def test_assignment_is_total_partition():
    utts = [utt(n, f"u{n}") for n in range(1, 300)]
    plan = curriculum.assign_buckets(utts)
    assert sum(len(s) for s in plan.subsets) == len(utts)
    assert len(plan.subsets[0]) == 299 - 21 + 1


def test_rejects_gapped_boundaries():
    with pytest.raises(ValueError, match="gap"):
        curriculum.assign_buckets([], [(21, None), (11, 20), (4, 10), (1, 2)])


def test_rejects_overlapping_boundaries():
    with pytest.raises(ValueError, match="gap or\noverlap|overlap|gap"):
        curriculum.assign_buckets([], [(21, None), (10, 20), (3, 10), (1, 2)])


def test_rejects_bounded_top_or_wrong_floor():
    with pytest.raises(ValueError, match="unbounded"):
        curriculum.assign_buckets([], [(21, 100), (11, 20), (3, 10), (1, 2)])
    with pytest.raises(ValueError, match="start at 1"):
        curriculum.assign_buckets([], [(21, None), (11, 20), (3, 10), (2, 2)])


def test_epoch_subsets_grow_monotonically():
    utts = [utt(n, f"u{n}") for n in (1, 2, 5, 8, 12, 19, 22, 30)]
    plan = curriculum.assign_buckets(utts)
    prev = set()
    for epoch in range(1, 7):
        ids = {u.utt_id for u in curriculum.epoch_subset(plan, epoch, seed=4)}
        assert prev <= ids
        prev = ids
    assert prev == {u.utt_id for u in utts}


def test_epoch_one_uses_only_longest_bucket():
    utts = [utt(n, f"u{n}") for n in (1, 5, 12, 22, 25, 40)]
    plan = curriculum.assign_buckets(utts)
    got = {u.n_words for u in curriculum.epoch_subset(plan, 1, seed=0)}
    assert got == {22, 25, 40}
    got3 = {u.n_words for u in curriculum.epoch_subset(plan, 3, seed=0)}
    assert got3 == {5, 12, 22, 25, 40}


def test_epoch_beyond_n_saturates():
    utts = [utt(n, f"u{n}") for n in (1, 5, 12, 22)]
    plan = curriculum.assign_buckets(utts)
    full = {u.utt_id for u in curriculum.epoch_subset(plan, 7, seed=0)}
    assert full == {u.utt_id for u in utts}


def test_shuffle_is_seed_and_epoch_derived():
    utts = [utt(n, f"u{n:03d}") for n in range(21, 60)]
    plan = curriculum.assign_buckets(utts)
    a = [u.utt_id for u in curriculum.epoch_subset(plan, 2, seed=9)]
    b = [u.utt_id for u in curriculum.epoch_subset(plan, 2, seed=9)]
    c = [u.utt_id for u in curriculum.epoch_subset(plan, 3, seed=9)]
    assert a == b
    assert sorted(a) == sorted(c) and a != c


def test_single_bucket_plan_is_plain_shuffled_training():
    utts = [utt(n, f"u{n:03d}") for n in range(1, 40)]
    plan = curriculum.assign_buckets(utts, [(1, None)])
    assert plan.n_subsets == 1
    for epoch in (1, 2, 5):
        got = curriculum.epoch_subset(plan, epoch, seed=3)
        assert sorted(u.utt_id for u in got) == sorted(u.utt_id for u in utts)
        order = np.random.default_rng(3 ^ epoch).permutation(len(utts))
        assert [u.utt_id for u in got] == [utts[i].utt_id for i in order]


def test_epoch_must_be_positive():
    plan = curriculum.assign_buckets([])
    with pytest.raises(ValueError):
        curriculum.epoch_subset(plan, 0, seed=0)
