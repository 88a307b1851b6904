import json

import numpy as np
import pytest

from actionlm.diffcore import ContractViolation
from actionlm.skeldata import (PROTOCOLS, UNSEEN_CLASS_COUNT, ActionSignal, IngestionError, SkeletonDataset,
                               SynthSpec, load_skeletons, normalize, normalize_dataset, save_skeletons, split,
                               synth_generate, trim_length)


def _line(label="wave hand", subject=1, frames=8, joints=2, value=0.5):
    return json.dumps({"label": label, "subject": subject, "frames": np.full((frames, joints, 3), value).tolist()})


@pytest.fixture(scope="module")
def desk_set():
    return normalize_dataset(synth_generate(SynthSpec.make(classes=5, joints=8, frames=64, noise_scale=0.05,
                                                           samples_per_class=100, seed=7)))


class TestLoading:
    def test_reads_and_trims(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text(_line(frames=10) + "\n\n" + _line(label="jump up", frames=8) + "\n")
        ds = load_skeletons(path)
        assert len(ds) == 2
        assert ds.class_names == ["wave hand", "jump up"]
        assert ds.samples[0].length == 8 and ds.samples[0].joints == 2
        assert list(ds.labels) == [0, 1]

    def test_trim_length(self):
        assert [trim_length(v) for v in (4, 5, 7, 8, 103)] == [4, 4, 4, 8, 100]

    def test_all_problems_reported(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        bad_shape = json.dumps({"label": "x", "subject": 0, "frames": [[1, 2, 3]]})
        path.write_text("\n".join([_line(), "{not json", json.dumps({"label": "x"}), bad_shape,
                                   _line(frames=3)]) + "\n")
        with pytest.raises(IngestionError) as info:
            load_skeletons(path)
        assert [n for n, _ in info.value.problems] == [2, 3, 4, 5]

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "nan.jsonl"
        path.write_text(_line(value=float("nan")) + "\n")
        with pytest.raises(IngestionError):
            load_skeletons(path)

    def test_unknown_label_with_fixed_names(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text(_line(label="juggle") + "\n")
        with pytest.raises(IngestionError):
            load_skeletons(path, class_names=["wave hand"])

    def test_round_trip(self, tmp_path):
        ds = synth_generate(SynthSpec.make(classes=3, joints=4, frames=16, samples_per_class=3))
        path = tmp_path / "rt.jsonl"
        save_skeletons(ds, path)
        back = load_skeletons(path, class_names=ds.class_names)
        assert back.class_names == ds.class_names
        for a, b in zip(ds.samples, back.samples):
            assert a.frames.tobytes() == b.frames.tobytes()
            assert (a.label, a.subject) == (b.label, b.subject)


class TestSynth:
    def test_noise_free_samples_identical(self):
        ds = synth_generate(SynthSpec.make(classes=2, joints=3, frames=8, noise_scale=0.0, samples_per_class=2))
        assert ds.samples[0].frames.tobytes() == ds.samples[1].frames.tobytes()

    def test_seed_changes_noise_not_structure(self):
        a = SynthSpec.make(classes=2, joints=3, frames=8, seed=1)
        b = SynthSpec.make(classes=2, joints=3, frames=8, seed=2)
        assert a.frequency.tobytes() == b.frequency.tobytes()
        sa, sb = synth_generate(a), synth_generate(b)
        assert sa.samples[0].frames.tobytes() != sb.samples[0].frames.tobytes()

    def test_deterministic(self):
        spec = SynthSpec.make(classes=2, joints=3, frames=8)
        assert synth_generate(spec).signals().tobytes() == synth_generate(spec).signals().tobytes()

    def test_frame_count_contract(self):
        with pytest.raises(ContractViolation):
            SynthSpec.make(frames=10)

    def test_duplicate_classes_rejected(self):
        spec = SynthSpec.make(classes=2, joints=2, frames=8)
        with pytest.raises(ContractViolation):
            SynthSpec(np.repeat(spec.frequency[:1], 2, 0), np.repeat(spec.amplitude[:1], 2, 0),
                      np.repeat(spec.phase[:1], 2, 0), spec.rest_pose, frames=8)

    def test_nearest_neighbour_separable(self, desk_set):
        sp = split(desk_set, "subject-split", 7)
        train, test = sp.train.signals().reshape(len(sp.train), -1), sp.test.signals().reshape(len(sp.test), -1)
        d = ((test[:, None, :] - train[None, :, :]) ** 2).sum(-1)
        pred = sp.train.labels[np.argmin(d, axis=1)]
        assert (pred == sp.test.labels).mean() >= 0.9


class TestNormalize:
    def test_root_at_origin_and_unit_scale(self, desk_set):
        for s in desk_set.samples[:20]:
            pts = s.frames.reshape(s.length, -1, 3)
            np.testing.assert_allclose(pts[0, 0], 0.0, atol=1e-15)
            assert np.linalg.norm(pts, axis=-1).mean() == pytest.approx(1.0, rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(ContractViolation):
            normalize(ActionSignal(np.zeros((4, 6))))


class TestSplits:
    def test_subject_split_disjoint(self, desk_set):
        sp = split(desk_set, "subject-split", 3)
        assert not set(sp.train.subject_ids) & set(sp.test.subject_ids)
        assert len(sp.train) + len(sp.test) == len(desk_set)

    def test_random_split_partition(self, desk_set):
        sp = split(desk_set, "random-split", 3)
        assert len(sp.test) == round(0.3 * len(desk_set))
        assert len(sp.train) + len(sp.test) == len(desk_set)

    def test_unseen_class_disjoint_labels(self, desk_set):
        sp = split(desk_set, "unseen-class", 3)
        assert len(sp.unseen_classes) == UNSEEN_CLASS_COUNT
        assert not set(sp.train.labels) & set(sp.test.labels)
        assert {desk_set.class_names[k] for k in sp.test.labels} == set(sp.unseen_classes)
        assert len(sp.train) + len(sp.test) + sp.dropped == len(desk_set)

    def test_unseen_needs_enough_classes(self):
        ds = synth_generate(SynthSpec.make(classes=3, joints=2, frames=8, samples_per_class=2))
        with pytest.raises(ContractViolation):
            split(ds, "unseen-class", 0)

    def test_unknown_protocol(self, desk_set):
        with pytest.raises(ContractViolation):
            split(desk_set, "cross-view", 0)

    @pytest.mark.parametrize("protocol", PROTOCOLS)
    def test_seeded(self, desk_set, protocol):
        a, b = split(desk_set, protocol, 5), split(desk_set, protocol, 5)
        assert a.test.signals().tobytes() == b.test.signals().tobytes()


def test_empty_dataset_signals():
    assert SkeletonDataset([], []).signals().shape == (0, 0, 0)
