import numpy as np
import pytest
from numpy.testing import assert_allclose

from suberase.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from suberase.optim import adamw_step, init_opt_state
from suberase.tensor import Tensor


def make_params(values):
    return {k: Tensor(np.array(v, dtype=np.float64)) for k, v in values.items()}


class TestAdamW:
    def test_zero_grad_zero_decay_is_fixed_point(self):
        params = make_params({"w": [1.0, -2.0, 3.0]})
        state = init_opt_state(params, weight_decay=0.0)
        before = params["w"].data.copy()
        adamw_step(params, {"w": np.zeros(3)}, state)
        assert_allclose(params["w"].data, before)
        assert state.step_count == 1

    def test_first_step_is_signed_lr(self):
        params = make_params({"w": [0.0, 0.0]})
        state = init_opt_state(params, learning_rate=1e-3, weight_decay=0.0)
        g = np.array([0.7, -1.3])
        adamw_step(params, {"w": g}, state)
        assert_allclose(params["w"].data, -1e-3 * np.sign(g), atol=1e-6 * 1e-3 + 1e-12)

    def test_lr_zero_is_identity(self):
        rng = np.random.default_rng(0)
        params = make_params({"w": rng.standard_normal(5)})
        before = params["w"].data.copy()
        state = init_opt_state(params, learning_rate=0.0)
        adamw_step(params, {"w": rng.standard_normal(5)}, state)
        assert np.array_equal(params["w"].data, before)

    def test_nan_grad_names_parameter(self):
        params = make_params({"bad_one": [1.0]})
        state = init_opt_state(params)
        with pytest.raises(ValueError, match="bad_one"):
            adamw_step(params, {"bad_one": np.array([np.nan])}, state)

    def test_converges_to_target_and_matches_scalar_oracle(self):
        # minimize ||x - c||^2 from x=0: 100 steps, lr 0.05, c of norm 1
        rng = np.random.default_rng(3)
        c = rng.standard_normal(4)
        c /= np.linalg.norm(c)
        params = make_params({"x": np.zeros(4)})
        state = init_opt_state(params, learning_rate=0.05, weight_decay=0.0)

        # independent scalar recursion oracle
        ox = np.zeros(4)
        om = np.zeros(4)
        ov = np.zeros(4)
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.05
        for t in range(1, 101):
            g = 2.0 * (params["x"].data - c)
            adamw_step(params, {"x": g}, state)

            og = 2.0 * (ox - c)
            om = b1 * om + (1 - b1) * og
            ov = b2 * ov + (1 - b2) * og * og
            mhat = om / (1 - b1**t)
            vhat = ov / (1 - b2**t)
            ox = ox - lr * mhat / (np.sqrt(vhat) + eps)

        assert_allclose(params["x"].data, ox, rtol=0, atol=1e-12)
        assert np.linalg.norm(params["x"].data - c) < 0.01

    def test_second_moment_nonnegative(self):
        rng = np.random.default_rng(4)
        params = make_params({"w": rng.standard_normal(6)})
        state = init_opt_state(params)
        for i in range(5):
            adamw_step(params, {"w": rng.standard_normal(6)}, state)
        assert np.all(state.second_moment["w"] >= 0.0)
        assert state.step_count == 5


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        arrays = {
            "model.w1": rng.standard_normal((3, 4)),
            "model.scalarish": rng.standard_normal((1,)),
            "opt.m.w1": rng.standard_normal((3, 4)),
        }
        p = tmp_path / "ck.sedc"
        save_checkpoint(p, arrays)
        loaded = load_checkpoint(p)
        assert set(loaded) == set(arrays)
        for k in arrays:
            assert np.array_equal(loaded[k], arrays[k])
            assert loaded[k].dtype == np.float64

    def test_identical_bytes_regardless_of_insertion_order(self, tmp_path):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal(3), rng.standard_normal((2, 2))
        save_checkpoint(tmp_path / "x1", {"a": a, "b": b})
        save_checkpoint(tmp_path / "x2", {"b": b, "a": a})
        assert (tmp_path / "x1").read_bytes() == (tmp_path / "x2").read_bytes()

    def test_corrupt_magic_rejected(self, tmp_path):
        p = tmp_path / "ck"
        save_checkpoint(p, {"w": np.zeros(2)})
        blob = bytearray(p.read_bytes())
        blob[:4] = b"XXXX"
        p.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)

    def test_truncated_file_rejected(self, tmp_path):
        p = tmp_path / "ck"
        save_checkpoint(p, {"w": np.arange(16.0)})
        blob = p.read_bytes()
        p.write_bytes(blob[: len(blob) - 7])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(p)

    def test_version_mismatch_rejected(self, tmp_path):
        p = tmp_path / "ck"
        save_checkpoint(p, {"w": np.zeros(2)})
        blob = bytearray(p.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        p.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(p)
