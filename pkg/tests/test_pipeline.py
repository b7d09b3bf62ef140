"""Model assembly: parameter init/serialization, full episode forwards,
true-class prototype extraction, and the episode-level losses."""

import numpy as np
import pytest

import mmproto.tensor as T
from mmproto.episodes import sample_episode
from mmproto.errors import ConfigurationError, DimensionError
from mmproto.mpe import MpeConfig
from mmproto.pipeline import (
    Model,
    ModelConfig,
    ModelParams,
    episode_ce,
    episode_pride_loss,
    init_model,
    load_params,
    params_from_bytes,
    params_to_bytes,
    save_params,
    update_bank_from_episode,
)
from mmproto.pride import TrainingPrideBank, pride_loss
from mmproto.tensor import Tensor
from oracles import ref_cross_entropy, ref_single_video_prototype

CONFIG = ModelConfig(omegas=(2,), d_k=4, d_p=8, se_heads=4)


def tiny_model(store, config=CONFIG, seed=0, dtype=np.float32):
    params = init_model(seed=seed, dim=store.manifest.dim, config=config,
                        dtype=dtype)
    return Model(store, config, params)


def tiny_episode(store, seed=0, n_way=2, k_shot=2, m_queries=2):
    return sample_episode(store, "base", n_way=n_way, k_shot=k_shot,
                          m_queries=m_queries,
                          rng=np.random.default_rng(seed))


class TestModelConfig:
    def test_rejects_empty_or_duplicate_omegas(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(omegas=())
        with pytest.raises(ConfigurationError):
            ModelConfig(omegas=(2, 2))

    def test_rejects_bad_widths(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(d_k=0)
        with pytest.raises(ConfigurationError):
            ModelConfig(tau=-1.0)

    def test_list_omegas_normalized(self):
        assert ModelConfig(omegas=[3, 2]).omegas == (3, 2)


class TestInitModel:
    def test_same_seed_bitwise_identical(self):
        a = init_model(seed=4, dim=8, config=CONFIG)
        b = init_model(seed=4, dim=8, config=CONFIG)
        for (name_a, t_a), (name_b, t_b) in zip(a.named_tensors(),
                                                b.named_tensors()):
            assert name_a == name_b
            np.testing.assert_array_equal(t_a.data, t_b.data)

    def test_different_seed_differs(self):
        a = init_model(seed=4, dim=8, config=CONFIG)
        b = init_model(seed=5, dim=8, config=CONFIG)
        assert not np.array_equal(a.trx[2].query_map.data,
                                  b.trx[2].query_map.data)

    def test_named_order_is_stable(self):
        config = ModelConfig(omegas=(3, 2), d_k=4, d_p=8)
        params = init_model(seed=0, dim=8, config=config)
        names = [name for name, _ in params.named_tensors()]
        assert names == [
            "trx2.query_map", "trx2.key_map", "trx2.value_map",
            "trx3.query_map", "trx3.key_map", "trx3.value_map",
            "se.w_q", "se.w_k", "se.w_v", "se.w_o",
            "mix",
        ]

    def test_all_params_require_grad(self):
        params = init_model(seed=0, dim=8, config=CONFIG)
        assert all(t.requires_grad for _, t in params.named_tensors())

    def test_mix_gate_starts_ce_dominant(self):
        params = init_model(seed=0, dim=8, config=CONFIG)
        gate = 1.0 / (1.0 + np.exp(-float(params.mix.data)))
        np.testing.assert_allclose(gate, 0.9, atol=1e-6)


class TestParamSnapshots:
    def test_bytes_roundtrip_bitwise(self):
        config = ModelConfig(omegas=(2,), d_k=4, d_p=8,
                             mpe=MpeConfig(mode="attention", heads=2))
        params = init_model(seed=1, dim=8, config=config)
        for _, t in params.named_tensors():
            t.data = t.data + 0.25   # move away from init
        blob = params_to_bytes(params)
        fresh = init_model(seed=2, dim=8, config=config)
        params_from_bytes(fresh, blob)
        for (_, t_a), (_, t_b) in zip(params.named_tensors(),
                                      fresh.named_tensors()):
            np.testing.assert_array_equal(t_a.data, t_b.data)
        assert params_to_bytes(fresh) == blob

    def test_equal_params_equal_bytes(self):
        a = init_model(seed=1, dim=8, config=CONFIG)
        b = init_model(seed=1, dim=8, config=CONFIG)
        assert params_to_bytes(a) == params_to_bytes(b)

    def test_shape_mismatch_rejected(self):
        blob = params_to_bytes(init_model(seed=1, dim=8, config=CONFIG))
        other = init_model(
            seed=1, dim=8,
            config=ModelConfig(omegas=(2,), d_k=5, d_p=8))
        with pytest.raises(ConfigurationError):
            params_from_bytes(other, blob)

    def test_name_mismatch_rejected(self):
        blob = params_to_bytes(init_model(seed=1, dim=8, config=CONFIG))
        other = init_model(
            seed=1, dim=8, config=ModelConfig(omegas=(3,), d_k=4, d_p=8))
        with pytest.raises(ConfigurationError):
            params_from_bytes(other, blob)

    def test_corrupt_blob_rejected(self):
        params = init_model(seed=1, dim=8, config=CONFIG)
        blob = params_to_bytes(params)
        with pytest.raises(ConfigurationError):
            params_from_bytes(params, b"XXXX" + blob[4:])
        with pytest.raises(ConfigurationError):
            params_from_bytes(params, blob[:-3])
        with pytest.raises(ConfigurationError):
            params_from_bytes(params, blob + b"\x00")

    def test_file_roundtrip(self, tmp_path):
        params = init_model(seed=6, dim=8, config=CONFIG)
        path = tmp_path / "params.bin"
        save_params(params, path)
        fresh = init_model(seed=7, dim=8, config=CONFIG)
        load_params(fresh, path)
        assert params_to_bytes(fresh) == params_to_bytes(params)


class TestForwardEpisode:
    def test_output_shapes(self, tiny_store):
        model = tiny_model(tiny_store)
        ep = tiny_episode(tiny_store, n_way=2, k_shot=2, m_queries=2)
        out = model.forward_episode(ep)
        assert out.logits.shape == (4, 2)
        assert set(out.fused) == {2}
        assert out.fused[2].shape == (4, 2, 3, 8)   # C(3,2)=3 tuples

    def test_logits_finite_and_nonpositive(self, tiny_store):
        model = tiny_model(tiny_store)
        out = model.forward_episode(tiny_episode(tiny_store, seed=1))
        assert np.all(np.isfinite(out.logits.data))
        assert np.all(out.logits.data <= 0.0)

    def test_multi_omega_averages_logits(self, tiny_store):
        config = ModelConfig(omegas=(2, 3), d_k=4, d_p=8)
        params = init_model(seed=3, dim=tiny_store.manifest.dim,
                            config=config, dtype=np.float64)
        ep = tiny_episode(tiny_store, seed=2)
        combined = Model(tiny_store, config, params).forward_episode(ep)

        single_logits = []
        for omega in (2, 3):
            sub_config = ModelConfig(omegas=(omega,), d_k=4, d_p=8)
            sub_params = ModelParams(trx={omega: params.trx[omega]},
                                     se=params.se, mpe=params.mpe,
                                     mix=params.mix)
            sub = Model(tiny_store, sub_config, sub_params)
            single_logits.append(sub.forward_episode(ep).logits.data)
        expected = (single_logits[0] + single_logits[1]) / 2.0
        np.testing.assert_allclose(combined.logits.data, expected,
                                   atol=1e-9)

    def test_lam_zero_never_builds_text_graph(self, tiny_store):
        config = ModelConfig(omegas=(2,), d_k=4, d_p=8,
                             mpe=MpeConfig(mode="weighted_average", lam=0.0))
        model = tiny_model(tiny_store, config=config)
        out = model.forward_episode(tiny_episode(tiny_store, seed=3))
        loss = episode_ce(out.logits, tiny_episode(tiny_store, seed=3).query_labels)
        loss.backward()
        assert model.params.se.w_q.grad is None

    def test_deterministic_forward(self, tiny_store):
        model = tiny_model(tiny_store)
        ep = tiny_episode(tiny_store, seed=4)
        a = model.forward_episode(ep).logits.data
        b = model.forward_episode(ep).logits.data
        np.testing.assert_array_equal(a, b)


class TestTruePrototypes:
    def test_matches_manual_slicing(self, tiny_store):
        model = tiny_model(tiny_store, seed=2)
        ep = tiny_episode(tiny_store, seed=5, n_way=2, k_shot=2,
                          m_queries=2)
        out = model.forward_episode(ep)
        protos = model.query_true_prototypes(out, ep)
        assert protos.shape == (4, 8)
        fused = out.fused[2].data
        for m, label in enumerate(ep.query_labels):
            np.testing.assert_allclose(protos.data[m],
                                       fused[m, label].mean(axis=0),
                                       atol=1e-6)

    def test_single_video_prototype_matches_oracle(self, tiny_store):
        config = ModelConfig(omegas=(2,), d_k=4, d_p=8,
                             mpe=MpeConfig(lam=0.5))
        model = tiny_model(tiny_store, config=config, dtype=np.float64)
        vids = tiny_store.videos_of_class(0)
        vec = model.single_video_prototype(vids[0], tuple(vids[1:3]), 0, 1)
        se = model.params.se
        trx = model.params.trx[2]
        expected = ref_single_video_prototype(
            tiny_store, trx.query_map.data, trx.key_map.data,
            trx.value_map.data,
            (se.w_q.data, se.w_k.data, se.w_v.data, se.w_o.data, se.heads),
            2, 0.5, vids[0], tuple(vids[1:3]), 0, 1)
        assert vec.shape == (8,) and vec.dtype == np.float64
        np.testing.assert_allclose(vec, expected, atol=1e-6)


class TestEpisodeLosses:
    def test_ce_matches_reference(self, rng):
        logits = rng.normal(size=(6, 3))
        labels = rng.integers(0, 3, size=6)
        loss = episode_ce(Tensor(logits), labels)
        np.testing.assert_allclose(loss.data,
                                   ref_cross_entropy(logits, labels),
                                   atol=1e-8)

    def test_ce_label_shape_checked(self):
        with pytest.raises(DimensionError):
            episode_ce(Tensor(np.zeros((4, 2))), np.zeros(3, dtype=int))

    def test_uniform_logits_give_log_n(self):
        loss = episode_ce(Tensor(np.zeros((5, 4))),
                          np.zeros(5, dtype=int))
        np.testing.assert_allclose(loss.data, np.log(4.0), atol=1e-7)

    def test_batched_pride_equals_mean_of_rows(self, rng):
        protos = rng.normal(size=(5, 6))
        bank = rng.normal(size=(4, 6))
        positions = rng.integers(0, 4, size=5)
        batched = episode_pride_loss(Tensor(protos), positions,
                                     Tensor(bank), tau=0.2)
        rows = [float(pride_loss(Tensor(protos[i]), int(positions[i]),
                                 Tensor(bank), tau=0.2).data)
                for i in range(5)]
        np.testing.assert_allclose(batched.data, np.mean(rows), atol=1e-7)

    def test_pride_positions_shape_checked(self):
        with pytest.raises(DimensionError):
            episode_pride_loss(Tensor(np.zeros((3, 4))),
                               np.zeros(2, dtype=int),
                               Tensor(np.zeros((2, 4))), tau=0.1)

    def test_ce_gradient_through_logits(self, rng):
        logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        labels = np.array([0, 1, 2, 0])

        def loss_fn():
            return episode_ce(logits, labels)

        assert T.finite_diff_check(loss_fn, [logits]) < 1e-3


class TestBankUpdates:
    def test_first_update_stores_slot_means(self, tiny_store):
        model = tiny_model(tiny_store)
        ep = tiny_episode(tiny_store, seed=6, n_way=2, k_shot=2,
                          m_queries=2)
        out = model.forward_episode(ep)
        protos = model.query_true_prototypes(out, ep)
        bank = TrainingPrideBank(n_classes=4, d_p=8)
        update_bank_from_episode(bank, ep, protos)
        for slot, ci in enumerate(ep.class_indices):
            expected = protos.data[slot * 2:(slot + 1) * 2].astype(
                np.float64).mean(axis=0)
            np.testing.assert_allclose(bank.vectors[ci], expected,
                                       atol=1e-7)
        untouched = set(range(4)) - set(ep.class_indices)
        for ci in untouched:
            assert not bank.initialized[ci]
