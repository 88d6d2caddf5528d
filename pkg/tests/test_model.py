"""Assembled model: packet plumbing, timestep scaling, and the sampling entry point."""

import pytest
import torch

from geodiffusion.attributes import ATTRIBUTE_ORDER, MetadataRecord
from geodiffusion.model import GenerationModel, ModelConfig

from conftest import tiny_config


def records_pair():
    base = dict(
        longitude=10.0, latitude=20.0, year=2017, month=6, day=15, gsd=1.0,
        t2m=280.0, tp=0.002, u10=1.0, v10=-1.0, ssr=1e7, tcc=0.5, d2m=275.0,
    )
    full = MetadataRecord(values=dict(base))
    partial = MetadataRecord(values={k: base[k] for k in ("longitude", "latitude", "year")})
    return [full, partial]


class TestModelConfig:
    def test_dict_roundtrip(self):
        cfg = tiny_config()
        again = ModelConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_ranges_survive_json_lists(self):
        # JSON turns tuples into lists; from_dict must restore tuples.
        d = tiny_config().to_dict()
        d["ranges"] = {k: list(v) for k, v in d["ranges"].items()}
        cfg = ModelConfig.from_dict(d)
        assert all(isinstance(v, tuple) for v in cfg.ranges.values())


class TestNormalizeRecords:
    def test_values_and_mask(self, tiny_model):
        values, mask = tiny_model.normalize_records(records_pair())
        assert values.shape == (2, len(ATTRIBUTE_ORDER))
        assert mask.shape == (2, len(ATTRIBUTE_ORDER))
        assert mask.dtype == torch.bool
        assert mask[0].all()
        assert int(mask[1].sum()) == 3
        assert (values >= 0).all() and (values <= 1000).all()
        # Masked-out slots carry zeros; the encoder re-masks them anyway.
        assert (values[1][~mask[1]] == 0.0).all()

    def test_missing_ranges_rejected(self):
        model = GenerationModel(tiny_config(ranges={}))
        with pytest.raises(ValueError, match="ranges"):
            model.normalize_records(records_pair())


class TestPackets:
    def test_per_call_packet_adds_timestep(self, tiny_model):
        # conditioning() must equal the sampler route: fused metadata plus the
        # embedded timestep, computed from the same records.
        records = records_pair()
        captions = ["a satellite image", "a satellite image of a lake"]
        t = torch.tensor([3.0, 40.0])
        full = tiny_model.conditioning(records, captions, t)
        meta = tiny_model.metadata_packet(records, captions)
        expected = meta.vector + tiny_model.timestep_embedding(t)
        assert torch.allclose(full.vector, expected, atol=1e-6)
        assert torch.equal(full.caption, meta.caption)

    def test_eps_fn_matches_direct_denoise(self, tiny_model):
        records = records_pair()
        captions = ["a satellite image", "a satellite image"]
        tau = 7
        x = torch.randn(2, 3, 16, 16)
        via_sampler = tiny_model.eps_fn(tiny_model.metadata_packet(records, captions))(x, tau)
        t = torch.full((2,), float(tau))
        via_packet = tiny_model.denoise(x, tiny_model.conditioning(records, captions, t))
        assert torch.allclose(via_sampler, via_packet, atol=1e-6)

    def test_unconditional_packet_is_record_free(self, tiny_model):
        pkt = tiny_model.unconditional_packet(3)
        assert pkt.vector.shape == (3, tiny_model.config.embed_dim)
        assert pkt.caption.shape == (3, tiny_model.config.caption_dim)
        # Empty captions embed to zeros; the metadata path runs the fused
        # all-masked bundle, which need not be zero under concat.
        assert torch.equal(pkt.caption, torch.zeros_like(pkt.caption))
        values = torch.zeros(3, len(ATTRIBUTE_ORDER))
        mask = torch.zeros(3, len(ATTRIBUTE_ORDER), dtype=torch.bool)
        expected = tiny_model.fuse(tiny_model.bundle(values, mask))
        assert torch.allclose(pkt.vector, expected, atol=0)

    def test_additive_unconditional_vector_is_zero(self):
        torch.manual_seed(0)
        model = GenerationModel(tiny_config(strategy="additive"))
        pkt = model.unconditional_packet(2)
        assert torch.equal(pkt.vector, torch.zeros_like(pkt.vector))


class TestTimestepScaling:
    def test_steps_map_onto_shared_scale(self, tiny_model):
        # 50-step schedule: integer step 25 lands at 500 on the [0,1000) axis
        # the sinusoid tables were sized for.
        out = tiny_model.timestep_embedding(25.0)
        direct = tiny_model.timestep_encoder(torch.tensor(500.0))
        assert torch.allclose(out, direct, atol=0)

    def test_thousand_step_schedule_is_identity_scale(self):
        torch.manual_seed(0)
        model = GenerationModel(tiny_config(schedule_steps=1000))
        out = model.timestep_embedding(777.0)
        direct = model.timestep_encoder(torch.tensor(777.0))
        assert torch.allclose(out, direct, atol=0)


class TestSample:
    def test_shape_and_range(self, tiny_model):
        pkt = tiny_model.metadata_packet(records_pair(), ["a", "a"])
        gen = torch.Generator().manual_seed(0)
        out = tiny_model.sample(pkt, steps=4, generator=gen)
        assert out.shape == (2, 3, 16, 16)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_seeded_generator_reproduces(self, tiny_model):
        pkt = tiny_model.metadata_packet(records_pair(), ["a", "a"])
        a = tiny_model.sample(pkt, steps=4, generator=torch.Generator().manual_seed(7))
        b = tiny_model.sample(pkt, steps=4, generator=torch.Generator().manual_seed(7))
        assert torch.equal(a, b)

    def test_x_init_overrides_generator(self, tiny_model):
        pkt = tiny_model.metadata_packet(records_pair(), ["a", "a"])
        x0 = torch.randn(2, 3, 16, 16)
        a = tiny_model.sample(pkt, steps=4, x_init=x0)
        b = tiny_model.sample(pkt, steps=4, x_init=x0.clone(),
                              generator=torch.Generator().manual_seed(99))
        assert torch.equal(a, b)

    def test_guidance_one_never_builds_unconditional(self, tiny_model, monkeypatch):
        def boom(batch):
            raise AssertionError("unconditional packet built at guidance 1.0")

        monkeypatch.setattr(tiny_model, "unconditional_packet", boom)
        pkt = tiny_model.metadata_packet(records_pair(), ["a", "a"])
        tiny_model.sample(pkt, steps=2, guidance=1.0,
                          generator=torch.Generator().manual_seed(0))

    def test_guidance_changes_output(self, tiny_model):
        pkt = tiny_model.metadata_packet(records_pair(), ["a", "a"])
        x0 = torch.randn(2, 3, 16, 16)
        plain = tiny_model.sample(pkt, steps=3, x_init=x0)
        guided = tiny_model.sample(pkt, steps=3, x_init=x0, guidance=3.0)
        assert not torch.allclose(plain, guided)
