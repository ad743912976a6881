import struct

import numpy as np
import pytest

from shlight import checkpoint
from shlight.checkpoint import Checkpoint, config_digest
from shlight.errors import ParseError, ShapeError
from shlight.optim import AdamState, adam_step


class TestAdam:
    def test_zero_gradient_leaves_params(self, rng):
        p = {"w": rng.normal(size=(3, 2))}
        before = p["w"].copy()
        adam_step(p, {"w": np.zeros((3, 2))}, AdamState())
        assert np.array_equal(p["w"], before)

    def test_first_step_is_lr_sign(self, rng):
        g = rng.normal(size=10)
        p = {"w": np.zeros(10)}
        adam_step(p, {"w": g}, AdamState(lr=1e-3))
        expected = -1e-3 * g / (np.abs(g) + 1e-8)
        assert np.allclose(p["w"], expected, rtol=1e-9)

    def test_against_reference_loop(self, rng):
        # plain scalar Adam written out longhand
        gs = rng.normal(size=(5, 4))
        p = {"w": np.ones(4)}
        st = AdamState(lr=0.01)
        for g in gs:
            adam_step(p, {"w": g}, st)
        ref = np.ones(4)
        m = v = np.zeros(4)
        for t, g in enumerate(gs, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(p["w"], ref, rtol=1e-12)

    def test_copies_are_deterministic(self, rng):
        g = {"w": rng.normal(size=3)}
        st = AdamState()
        adam_step({"w": np.zeros(3)}, g, st)
        a, b = {"w": np.ones(3)}, {"w": np.ones(3)}
        adam_step(a, g, st.copy())
        adam_step(b, g, st.copy())
        assert np.array_equal(a["w"], b["w"])

    def test_missing_grad_skipped_and_shape_checked(self):
        p = {"a": np.ones(2), "b": np.ones(2)}
        adam_step(p, {"a": np.ones(2)}, AdamState())
        assert p["b"].tolist() == [1.0, 1.0]
        with pytest.raises(ShapeError):
            adam_step(p, {"a": np.ones(3)}, AdamState())


def _ckpt(rng, with_opt=True):
    tensors = {"conv1/w": rng.normal(size=(3, 3, 3, 8)).astype(np.float32),
               "fc/b": rng.normal(size=(27,)).astype(np.float32)}
    opt = None
    if with_opt:
        opt = AdamState(lr=3e-4, step=17)
        opt.m = {k: v * 0.1 for k, v in tensors.items()}
        opt.v = {k: v * v for k, v in tensors.items()}
    return Checkpoint({"model": {"profile": "tiny"}, "norm_scale": 19.1}, tensors, opt, {"best_epoch": 4})


class TestCheckpoint:
    def test_round_trip(self, rng, tmp_path):
        c = _ckpt(rng)
        checkpoint.save(tmp_path / "m.shl", c)
        back = checkpoint.load(tmp_path / "m.shl")
        assert back.config == c.config and back.meta == c.meta
        for k in c.tensors:
            assert np.array_equal(back.tensors[k], c.tensors[k])
            assert np.array_equal(back.optimizer.m[k], c.optimizer.m[k])
            assert np.array_equal(back.optimizer.v[k], c.optimizer.v[k])
        assert back.optimizer.step == 17 and back.optimizer.lr == 3e-4

    def test_bytes_deterministic(self, rng):
        c = _ckpt(rng)
        assert checkpoint.dumps(c) == checkpoint.dumps(c)

    def test_header(self, rng):
        raw = checkpoint.dumps(_ckpt(rng, with_opt=False))
        assert raw[:4] == b"SHL1"
        assert struct.unpack("<I", raw[4:8])[0] == 1

    def test_digest_ignores_key_order(self):
        assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})

    def test_corrupted_tensor_checksum(self, rng):
        raw = bytearray(checkpoint.dumps(_ckpt(rng, with_opt=False)))
        raw[-10] ^= 0xFF
        with pytest.raises(ParseError, match="checksum"):
            checkpoint.loads(bytes(raw))

    def test_corrupted_config(self, rng):
        raw = bytearray(checkpoint.dumps(_ckpt(rng)))
        raw[14] ^= 0x01
        with pytest.raises(ParseError, match="digest"):
            checkpoint.loads(bytes(raw))

    @pytest.mark.parametrize("cut", [2, 40, -5])
    def test_truncated(self, rng, cut):
        raw = checkpoint.dumps(_ckpt(rng))
        with pytest.raises(ParseError):
            checkpoint.loads(raw[:cut])

    def test_bad_magic_and_version(self, rng):
        raw = checkpoint.dumps(_ckpt(rng))
        with pytest.raises(ParseError) as exc:
            checkpoint.loads(b"XXXX" + raw[4:])
        assert exc.value.offset == 0
        with pytest.raises(ParseError, match="version"):
            checkpoint.loads(raw[:4] + struct.pack("<I", 9) + raw[8:])
