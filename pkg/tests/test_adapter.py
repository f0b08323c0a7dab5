import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from config import CONFIG
from nn.adapter import (AdapterMode, AdapterSet, LowRankPair, Slot, init_adapter, lora_delta, merge_parallel,
                        merge_serial, param_count, scaling, serial_transform, slot_seed)
from nn.errors import ShapeError
from nn.linalg import effective_rank, svd
from tests.conftest import random_pair


class TestLowRankPair:
    def test_rank_mismatch(self):
        with pytest.raises(ShapeError):
            LowRankPair(b=np.zeros((4, 2)), a=np.zeros((3, 4)))

    def test_rank_above_dims(self):
        with pytest.raises(ShapeError):
            LowRankPair(b=np.zeros((2, 3)), a=np.zeros((3, 2)))

    def test_delta_rank_bounded(self):
        p = random_pair(10, 10, 3, seed=5)
        assert effective_rank(svd(lora_delta(p)).s, 1e-8) == 3


class TestAdapterSet:
    def test_parallel_needs_all_projection_slots(self):
        pairs = {s: random_pair(4, 4, 1, i) for i, s in enumerate((Slot.Q, Slot.K, Slot.V))}
        with pytest.raises(ValueError):
            AdapterSet(mode=AdapterMode.PARALLEL, parallel=pairs)

    def test_serial_rejects_parallel_slots(self):
        with pytest.raises(ValueError):
            AdapterSet(mode=AdapterMode.SERIAL, serial=random_pair(4, 4, 1, 0),
                       parallel={Slot.Q: random_pair(4, 4, 1, 1)})

    def test_serial_must_be_square(self):
        with pytest.raises(ShapeError):
            AdapterSet(mode=AdapterMode.SERIAL, serial=random_pair(4, 3, 1, 0))


class TestInitAdapter:
    @pytest.mark.parametrize("mode", AdapterMode.ALL)
    def test_delta_zero_at_init(self, mode):
        ad = init_adapter(mode, 8, 2, seed=3)
        for pair in ad.pairs().values():
            assert_array_equal(lora_delta(pair), np.zeros((8, 8)))

    def test_serial_shapes(self):
        ad = init_adapter(AdapterMode.SERIAL, 8, 2)
        assert list(ad.pairs()) == [Slot.SERIAL]
        assert ad.serial.b.shape == (8, 2)
        assert ad.serial.a.shape == (2, 8)
        assert not np.any(ad.serial.b)
        assert np.any(ad.serial.a)

    def test_parallel_slots(self):
        ad = init_adapter(AdapterMode.PARALLEL, 8, 2)
        assert list(ad.pairs()) == list(Slot.PROJECTIONS)
        assert ad.serial is None

    def test_same_seed_same_factors(self):
        a = init_adapter(AdapterMode.PARALLEL, 8, 2, seed=11)
        b = init_adapter(AdapterMode.PARALLEL, 8, 2, seed=11)
        for slot in Slot.PROJECTIONS:
            assert_array_equal(a.parallel[slot].a, b.parallel[slot].a)

    def test_slots_get_distinct_streams(self):
        ad = init_adapter(AdapterMode.PARALLEL, 8, 2, seed=0)
        assert not np.array_equal(ad.parallel[Slot.Q].a, ad.parallel[Slot.K].a)

    def test_block_offsets(self):
        assert slot_seed(10, Slot.V, block=2) == 10 + 32 + 3
        assert slot_seed(0, Slot.SERIAL) == 5

    def test_rank_above_d_model(self):
        with pytest.raises(ValueError):
            init_adapter(AdapterMode.SERIAL, 4, 5)

    def test_scaling_defaults_to_one(self):
        assert CONFIG.LORA_ALPHA is None
        assert scaling(8) == 1.0

    def test_scaling_alpha_over_rank(self, monkeypatch):
        monkeypatch.setattr(CONFIG, "LORA_ALPHA", 16.0)
        assert scaling(8) == 2.0


class TestLoraDelta:
    def test_zero_b(self):
        p = LowRankPair(b=np.zeros((3, 1)), a=np.ones((1, 3)))
        assert_array_equal(lora_delta(p), np.zeros((3, 3)))

    def test_hand_arithmetic(self):
        p = LowRankPair(b=[[1.0], [0.0]], a=[[2.0, 3.0]])
        assert_array_equal(lora_delta(p), [[2.0, 3.0], [0.0, 0.0]])


class TestSerialTransform:
    def test_zero_b_is_bitwise_noop(self, rng):
        x = rng.standard_normal((6, 4))
        p = LowRankPair(b=np.zeros((6, 2)), a=rng.standard_normal((2, 6)))
        assert_array_equal(serial_transform(x, p), x)

    def test_hand_arithmetic(self):
        p = LowRankPair(b=[[1.0], [0.0]], a=[[0.0, 1.0]])
        assert_array_equal(serial_transform([[5.0], [7.0]], p), [[12.0], [7.0]])

    def test_explicit_identity_oracle(self, rng):
        p = random_pair(9, 9, 3, seed=2)
        x = rng.standard_normal((9, 5))
        assert_allclose(serial_transform(x, p), (np.eye(9) + lora_delta(p)) @ x, atol=1e-12)

    def test_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError):
            serial_transform(rng.standard_normal((5, 2)), random_pair(6, 6, 2, seed=0))


class TestMerge:
    def test_parallel_zero_b(self, rng):
        w = rng.standard_normal((5, 5))
        p = LowRankPair(b=np.zeros((5, 2)), a=rng.standard_normal((2, 5)))
        assert_array_equal(merge_parallel(w, p), w)

    def test_parallel_zero_w(self):
        p = random_pair(5, 5, 2, seed=4)
        assert_array_equal(merge_parallel(np.zeros((5, 5)), p), lora_delta(p))

    def test_parallel_forward_oracle(self, rng):
        w = rng.standard_normal((8, 8))
        p = random_pair(8, 8, 2, seed=8)
        x = rng.standard_normal((8, 3))
        assert_allclose(merge_parallel(w, p) @ x, w @ x + p.b @ (p.a @ x), atol=1e-12)

    def test_serial_zero_b(self, rng):
        w = rng.standard_normal((5, 5))
        p = LowRankPair(b=np.zeros((5, 2)), a=rng.standard_normal((2, 5)))
        assert_array_equal(merge_serial(w, p), w)

    def test_serial_identity_matches_parallel(self):
        p = random_pair(6, 6, 2, seed=9)
        assert_array_equal(merge_serial(np.eye(6), p), merge_parallel(np.eye(6), p))

    def test_serial_equivalence(self, rng):
        w = rng.standard_normal((8, 8))
        p = random_pair(8, 8, 2, seed=10)
        merged = merge_serial(w, p)
        for _ in range(100):
            x = rng.standard_normal((8, 1))
            assert_allclose(merged @ x, w @ serial_transform(x, p), atol=1e-12)

    def test_serial_rejects_mismatch(self, rng):
        with pytest.raises(ShapeError):
            merge_serial(rng.standard_normal((4, 5)), random_pair(4, 4, 1, seed=0))


class TestParamCount:
    def test_small_example(self):
        assert param_count(8, 2, 1, AdapterMode.PARALLEL) == 128
        assert param_count(8, 2, 1, AdapterMode.SERIAL) == 32

    @pytest.mark.parametrize("slots", [(Slot.Q,), (Slot.Q, Slot.V), Slot.PROJECTIONS])
    def test_ratio_is_slot_count(self, slots):
        parallel = param_count(64, 4, 3, AdapterMode.PARALLEL, slots)
        serial = param_count(64, 4, 3, AdapterMode.SERIAL)
        assert parallel / serial == len(slots)

    def test_matches_live_adapters(self):
        for mode in AdapterMode.ALL:
            assert init_adapter(mode, 12, 3).n_params == param_count(12, 3, 1, mode)

    def test_non_square_slot_dims(self):
        count = param_count(8, 2, 1, AdapterMode.PARALLEL, (Slot.Q,), {Slot.Q: (16, 8)})
        assert count == 2 * (16 + 8)

    def test_empty_slots_rejected(self):
        with pytest.raises(ValueError):
            param_count(8, 2, 1, AdapterMode.PARALLEL, ())


class TestSerialEquivalenceGrid:
    @pytest.mark.parametrize("d", [8, 16, 64])
    @pytest.mark.parametrize("r", [1, 2, 8])
    def test_merge_matches_transform(self, d, r):
        rng = np.random.Generator(np.random.PCG64(100 * d + r))
        for _ in range(100):
            w = rng.standard_normal((d, d))
            p = LowRankPair(b=rng.standard_normal((d, r)), a=rng.standard_normal((r, d)))
            x = rng.standard_normal((d, 1))
            error = np.linalg.norm(merge_serial(w, p) @ x - w @ serial_transform(x, p)) / np.linalg.norm(w @ x)
            assert error < 1e-10
