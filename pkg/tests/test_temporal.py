"""Sequence conditioning: zero-gate identity, order invariance, dataset splits."""

import random

import pytest
import torch

from geodiffusion.attributes import MetadataRecord
from geodiffusion.temporal import (
    MAX_SEQUENCE_FRAMES,
    ConditioningSequence,
    TemporalControl,
    TemporalDataset,
    TemporalModel,
    TemporalTrainConfig,
    TemporalTrainer,
)
from geodiffusion.training import ImageDataset, TrainItem

from conftest import tiny_ranges


def frame(seed, day=1.0, size=16):
    g = torch.Generator().manual_seed(seed)
    img = torch.rand(3, size, size, generator=g) * 2 - 1
    rec = MetadataRecord(
        values=dict(
            longitude=10.0, latitude=20.0, year=2021.0, month=5.0, day=day, gsd=1.0,
            t2m=280.0, tp=0.001, u10=2.0, v10=1.0, ssr=1.2e7, tcc=0.4, d2m=270.0,
        )
    )
    return img, rec


def make_temporal(tiny_model):
    torch.manual_seed(9)
    control = TemporalControl(
        embed_dim=tiny_model.config.embed_dim,
        base=tiny_model.config.unet_base,
        mid=tiny_model.config.unet_mid,
    )
    return TemporalModel(base=tiny_model, control=control)


class TestConditioningSequence:
    def test_frame_count_bounds(self):
        img, rec = frame(0)
        with pytest.raises(ValueError, match="1..3"):
            ConditioningSequence(images=[], records=[], padding=[])
        with pytest.raises(ValueError, match="1..3"):
            ConditioningSequence(
                images=[img] * 4, records=[rec] * 4, padding=[False] * 4
            )

    def test_field_alignment(self):
        img, rec = frame(0)
        with pytest.raises(ValueError, match="align"):
            ConditioningSequence(images=[img], records=[rec, rec], padding=[False])

    def test_all_padding_rejected(self):
        img, rec = frame(0)
        with pytest.raises(ValueError, match="no real frames"):
            ConditioningSequence(images=[img], records=[rec], padding=[True])

    def test_padded_repeats_real_members(self):
        img, rec = frame(0)
        seq = ConditioningSequence.padded([img], [rec], random.Random(0))
        assert len(seq.images) == MAX_SEQUENCE_FRAMES
        assert seq.padding == [False, True, True]
        for pad_img in seq.images[1:]:
            assert torch.equal(pad_img, img)

    def test_padded_full_sequence_untouched(self):
        frames = [frame(i, day=float(i + 1)) for i in range(3)]
        seq = ConditioningSequence.padded(
            [f[0] for f in frames], [f[1] for f in frames], random.Random(0)
        )
        assert seq.padding == [False, False, False]

    def test_canonical_order_is_permutation_invariant(self):
        frames = [frame(i, day=float(3 - i)) for i in range(3)]  # days 3, 2, 1
        imgs = [f[0] for f in frames]
        recs = [f[1] for f in frames]
        a = ConditioningSequence(images=imgs, records=recs, padding=[False] * 3)
        b = ConditioningSequence(
            images=imgs[::-1], records=recs[::-1], padding=[False] * 3
        )
        fa = a.canonical_real_frames()
        fb = b.canonical_real_frames()
        assert [r.values["day"] for _, r in fa] == [1.0, 2.0, 3.0]
        for (ia, ra), (ib, rb) in zip(fa, fb):
            assert torch.equal(ia, ib) and ra is rb

    def test_same_date_frames_order_by_content(self):
        # Two frames on the same calendar day still get a deterministic
        # order via the content hash.
        f1, f2 = frame(1, day=5.0), frame(2, day=5.0)
        a = ConditioningSequence(
            images=[f1[0], f2[0]], records=[f1[1], f2[1]], padding=[False, False]
        )
        b = ConditioningSequence(
            images=[f2[0], f1[0]], records=[f2[1], f1[1]], padding=[False, False]
        )
        for (ia, _), (ib, _) in zip(a.canonical_real_frames(), b.canonical_real_frames()):
            assert torch.equal(ia, ib)

    def test_padding_dropped_from_canonical(self):
        img, rec = frame(0)
        seq = ConditioningSequence.padded([img], [rec], random.Random(3))
        assert len(seq.canonical_real_frames()) == 1


class TestZeroGateIdentity:
    def test_fresh_gates_are_exactly_zero(self):
        control = TemporalControl(embed_dim=16, base=8, mid=16)
        assert torch.equal(control.gates.detach(), torch.zeros(2))

    def test_denoise_matches_base_bitwise(self, tiny_model):
        temporal = make_temporal(tiny_model)
        img, rec = frame(0)
        seq = ConditioningSequence.padded([img], [rec], random.Random(0))
        control = temporal.sequence_features([seq])
        assert torch.equal(control[0], torch.zeros_like(control[0]))
        assert torch.equal(control[1], torch.zeros_like(control[1]))
        z = torch.randn(1, 3, 16, 16)
        t = torch.zeros(1)
        full_packet = tiny_model.conditioning([rec], ["a satellite image"], t)
        base_out = tiny_model.denoise(z, full_packet)
        ctrl_out = temporal.denoise(z, full_packet, control)
        assert torch.equal(base_out, ctrl_out)

    def test_sample_matches_base_bitwise(self, tiny_model):
        temporal = make_temporal(tiny_model)
        img, rec = frame(0)
        seq = ConditioningSequence.padded([img], [rec], random.Random(0))
        packet = tiny_model.metadata_packet([rec], ["a satellite image"])
        x0 = torch.randn(1, 3, 16, 16)
        base = tiny_model.sample(packet, steps=4, x_init=x0)
        controlled = temporal.sample(packet, seq, steps=4, x_init=x0)
        assert torch.equal(base, controlled)

    def test_nonzero_gates_change_output(self, tiny_model):
        temporal = make_temporal(tiny_model)
        with torch.no_grad():
            temporal.control.gates.fill_(0.5)
        img, rec = frame(0)
        seq = ConditioningSequence.padded([img], [rec], random.Random(0))
        packet = tiny_model.metadata_packet([rec], ["a satellite image"])
        x0 = torch.randn(1, 3, 16, 16)
        base = tiny_model.sample(packet, steps=4, x_init=x0)
        controlled = temporal.sample(packet, seq, steps=4, x_init=x0)
        assert not torch.allclose(base, controlled)


class TestSequenceFeatures:
    def test_permutation_invariant(self, tiny_model):
        temporal = make_temporal(tiny_model)
        with torch.no_grad():
            temporal.control.gates.fill_(1.0)
        frames = [frame(i, day=float(i + 1)) for i in range(3)]
        imgs = [f[0] for f in frames]
        recs = [f[1] for f in frames]
        seq_a = ConditioningSequence(images=imgs, records=recs, padding=[False] * 3)
        seq_b = ConditioningSequence(
            images=[imgs[2], imgs[0], imgs[1]],
            records=[recs[2], recs[0], recs[1]],
            padding=[False] * 3,
        )
        fa = temporal.sequence_features([seq_a])
        fb = temporal.sequence_features([seq_b])
        assert torch.equal(fa[0], fb[0])
        assert torch.equal(fa[1], fb[1])

    def test_padding_copies_do_not_shift_features(self, tiny_model):
        # A sequence padded from one real frame must aggregate exactly like
        # the bare frame: flagged copies are dropped before averaging.
        temporal = make_temporal(tiny_model)
        with torch.no_grad():
            temporal.control.gates.fill_(1.0)
        img, rec = frame(0)
        bare = ConditioningSequence(images=[img], records=[rec], padding=[False])
        padded = ConditioningSequence.padded([img], [rec], random.Random(1))
        fa = temporal.sequence_features([bare])
        fb = temporal.sequence_features([padded])
        assert torch.equal(fa[0], fb[0])
        assert torch.equal(fa[1], fb[1])

    def test_aggregate_is_mean_of_per_frame_features(self, tiny_model):
        temporal = make_temporal(tiny_model)
        with torch.no_grad():
            temporal.control.gates.fill_(1.0)
        frames = [frame(i, day=float(i + 1)) for i in range(2)]
        seq = ConditioningSequence(
            images=[f[0] for f in frames],
            records=[f[1] for f in frames],
            padding=[False, False],
        )
        got = temporal.sequence_features([seq])
        singles = [
            temporal.sequence_features(
                [ConditioningSequence(images=[f[0]], records=[f[1]], padding=[False])]
            )
            for f in frames
        ]
        mean0 = (singles[0][0] + singles[1][0]) / 2.0
        mean1 = (singles[0][1] + singles[1][1]) / 2.0
        # heads and gates are linear, so the mean commutes through them
        assert torch.allclose(got[0], mean0, atol=1e-6)
        assert torch.allclose(got[1], mean1, atol=1e-6)

    def test_batch_of_sequences(self, tiny_model):
        temporal = make_temporal(tiny_model)
        seqs = [
            ConditioningSequence.padded([frame(i)[0]], [frame(i)[1]], random.Random(i))
            for i in range(3)
        ]
        f1, f2 = temporal.sequence_features(seqs)
        assert f1.shape[0] == 3 and f2.shape[0] == 3


def dataset_with_locations(layout):
    """layout: list of (lat, n_frames). Frames get consecutive days."""
    items = []
    for lat, n in layout:
        for d in range(n):
            img, _ = frame(int(lat * 100) + d)
            rec = MetadataRecord(
                values=dict(
                    longitude=5.0, latitude=lat, year=2021.0, month=3.0,
                    day=float(d + 1), gsd=1.0, t2m=280.0, tp=0.001, u10=1.0,
                    v10=1.0, ssr=1e7, tcc=0.3, d2m=270.0,
                )
            )
            items.append(TrainItem(image=img, record=rec, object_class="lake", country="japan"))
    return ImageDataset(items=items, ranges=tiny_ranges())


class TestTemporalDataset:
    def test_single_frame_locations_excluded(self):
        data = TemporalDataset.build(dataset_with_locations([(1.0, 1), (2.0, 3)]))
        used = {it.target_index for it in data.train_items}
        used.update(i for it in data.train_items for i in it.candidate_indices)
        assert 0 not in used  # the lone frame at lat 1.0 is index 0

    def test_all_single_frames_is_an_error(self):
        with pytest.raises(ValueError, match="multi-frame"):
            TemporalDataset.build(dataset_with_locations([(1.0, 1), (2.0, 1)]))

    def test_holdout_reserves_chronological_ends(self):
        data = TemporalDataset.build(dataset_with_locations([(1.0, 5)]))
        assert len(data.eval_past) == 1
        assert len(data.eval_future) == 1
        first, last = data.eval_past[0], data.eval_future[0]
        days = lambda i: data.dataset.items[i].record.values["day"]
        assert days(first.target_index) == 1.0
        assert days(last.target_index) == 5.0
        trained = {it.target_index for it in data.train_items}
        assert first.target_index not in trained
        assert last.target_index not in trained
        for it in data.train_items:
            assert first.target_index not in it.candidate_indices
            assert last.target_index not in it.candidate_indices

    def test_short_locations_skip_holdout(self):
        data = TemporalDataset.build(dataset_with_locations([(1.0, 3)]))
        assert data.eval_past == [] and data.eval_future == []
        assert len(data.train_items) == 3

    def test_candidates_exclude_target(self):
        data = TemporalDataset.build(dataset_with_locations([(1.0, 4), (2.0, 6)]))
        for it in data.train_items + data.eval_past + data.eval_future:
            assert it.target_index not in it.candidate_indices
            assert 1 <= len(it.candidate_indices)

    def test_sequence_for_draws_from_candidates(self):
        data = TemporalDataset.build(dataset_with_locations([(1.0, 6)]))
        rng = random.Random(0)
        item = data.train_items[0]
        seq = data.sequence_for(item, rng)
        assert len(seq.images) == MAX_SEQUENCE_FRAMES
        assert sum(1 for p in seq.padding if not p) == min(
            len(item.candidate_indices), MAX_SEQUENCE_FRAMES
        )


class TestTemporalTrainer:
    def test_base_stays_frozen_and_loss_is_finite(self, tiny_model):
        temporal = make_temporal(tiny_model)
        data = TemporalDataset.build(dataset_with_locations([(1.0, 4), (2.0, 5)]))
        before = {k: v.clone() for k, v in temporal.base.state_dict().items()}
        cfg = TemporalTrainConfig(steps=3, batch_size=2, seed=0)
        trainer = TemporalTrainer(temporal, data, cfg)
        history = trainer.run()
        assert all(torch.isfinite(torch.tensor(l)) for _, l in history)
        after = temporal.base.state_dict()
        for k in before:
            assert torch.equal(before[k], after[k]), k

    def test_gates_move_during_training(self, tiny_model):
        temporal = make_temporal(tiny_model)
        data = TemporalDataset.build(dataset_with_locations([(1.0, 4), (2.0, 5)]))
        cfg = TemporalTrainConfig(steps=8, batch_size=2, seed=0)
        TemporalTrainer(temporal, data, cfg).run()
        assert temporal.control.gates.abs().sum() > 0
