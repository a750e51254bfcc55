"""Weight-store format: round trips, known byte layouts, corruption errors,
and checkpoint conversion."""

import struct
import zlib

import numpy as np
import pytest

from rdrnet.errors import (
    BadMagicError,
    ChecksumError,
    ContractError,
    MissingTensorError,
    TruncatedError,
    VersionError,
)
from rdrnet.network import VARIANTS, build, forward, named_tensors, reparameterize_network
from rdrnet.store import WeightStore, convert_checkpoint, load, save, store_from_network

from conftest import max_abs_diff, rand_tensor

MICRO = VARIANTS["micro"]


class TestRoundTrip:
    def test_empty_store(self, tmp_path):
        path = tmp_path / "empty.rdrw"
        save(WeightStore(), path)
        assert len(load(path)) == 0

    def test_bytes_identical_round_trip(self, tmp_path, rng):
        store = WeightStore.from_pairs([
            ("a.weight", rng.standard_normal((2, 3, 3, 3)).astype(np.float32)),
            ("a.bias", rng.standard_normal(2).astype(np.float32)),
            ("b.weight", rng.standard_normal((4, 2, 1, 1)).astype(np.float64)),
        ])
        p1, p2 = tmp_path / "one.rdrw", tmp_path / "two.rdrw"
        save(store, p1)
        save(load(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = load(p1)
        for name in store.names:
            assert np.array_equal(loaded[name], store[name])
            assert loaded[name].dtype == store[name].dtype

    def test_known_f32_payload_bytes(self, tmp_path):
        store = WeightStore.from_pairs([
            ("t", np.ones((1, 1, 1, 1), np.float32)),
        ])
        path = tmp_path / "one.rdrw"
        save(store, path)
        blob = path.read_bytes()
        assert blob[:4] == b"RDRW"
        assert struct.unpack("<H", blob[4:6])[0] == 1   # version
        assert struct.unpack("<I", blob[6:10])[0] == 1  # tensor count
        assert bytes.fromhex("0000803f") in blob        # IEEE-754 1.0f LE
        # trailing CRC covers everything before it
        assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])

    def test_rank_one_and_scalar_dims(self, tmp_path):
        store = WeightStore.from_pairs([("eps", np.array([1e-5], np.float32))])
        path = tmp_path / "r1.rdrw"
        save(store, path)
        assert load(path)["eps"].shape == (1,)


class TestCorruption:
    def _saved(self, tmp_path, rng):
        store = WeightStore.from_pairs([
            ("x.weight", rng.standard_normal((2, 2, 3, 3)).astype(np.float32)),
        ])
        path = tmp_path / "w.rdrw"
        save(store, path)
        return path

    def test_bad_magic(self, tmp_path, rng):
        path = self._saved(tmp_path, rng)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError):
            load(path)

    def test_version_mismatch(self, tmp_path, rng):
        path = self._saved(tmp_path, rng)
        blob = bytearray(path.read_bytes())
        blob[4:6] = struct.pack("<H", 9)
        body = bytes(blob[:-4])
        path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
        with pytest.raises(VersionError):
            load(path)

    def test_flipped_payload_byte(self, tmp_path, rng):
        path = self._saved(tmp_path, rng)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load(path)

    def test_truncation(self, tmp_path, rng):
        path = self._saved(tmp_path, rng)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises((TruncatedError, ChecksumError)):
            load(path)

    def test_truncation_inside_header(self, tmp_path, rng):
        path = self._saved(tmp_path, rng)
        path.write_bytes(path.read_bytes()[:6])
        with pytest.raises(TruncatedError):
            load(path)

    def test_duplicate_name_rejected(self):
        store = WeightStore()
        store.add("a.weight", np.zeros(1, np.float32))
        with pytest.raises(ContractError):
            store.add("a.weight", np.zeros(1, np.float32))


@pytest.fixture(scope="module")
def train_net():
    return build(MICRO, 11)


class TestConvertCheckpoint:
    def test_deploy_tensor_census(self, train_net):
        deploy = convert_checkpoint(store_from_network(train_net), MICRO)
        cfg = MICRO
        n_rb = (sum(cfg.stem_blocks) + sum(cfg.semantic_blocks[:2])
                + sum(cfg.detail_blocks[:2]))
        rb_tensors = 2 * n_rb                         # fused weight + bias each
        fusion_tensors = 2 * (2 + 3)                  # fusion1: 2 units, fusion2: 3
        n_bb_units = sum(
            3 + (1 if i == 0 else 0)
            for i in range(cfg.semantic_blocks[2])
        ) + sum(
            3 + (1 if i == 0 else 0)
            for i in range(cfg.detail_blocks[2])
        )
        bb_tensors = 2 * n_bb_units
        rppm_tensors = 2 * (1 + 4 + 1 + 1 + 1)        # scale0, pools, grouped, comp, shortcut
        head_tensors = 2 * 2                           # fused conv3 + classifier
        expect = rb_tensors + fusion_tensors + bb_tensors + rppm_tensors + head_tensors
        assert len(deploy) == expect

    def test_logits_parity_through_conversion(self, rng, train_net):
        deploy_store = convert_checkpoint(store_from_network(train_net), MICRO)
        dep_net = build(MICRO, deploy_store)
        direct = reparameterize_network(train_net)
        x = rand_tensor(rng, (2, 3, 64, 64))
        assert max_abs_diff(forward(dep_net, x), forward(direct, x)) == 0.0

    def test_double_conversion_rejected(self, train_net):
        deploy = convert_checkpoint(store_from_network(train_net), MICRO)
        with pytest.raises(ContractError):
            convert_checkpoint(deploy, MICRO)

    def test_missing_tensor_is_named(self, train_net):
        store = store_from_network(train_net)
        partial = WeightStore.from_pairs(
            (n, a) for n, a in store.items() if n != "rppm.scale0.conv.weight"
        )
        with pytest.raises(MissingTensorError) as exc:
            convert_checkpoint(partial, MICRO)
        assert "rppm.scale0.conv.weight" in str(exc.value)

    def test_store_names_match_walk(self, train_net):
        store = store_from_network(train_net)
        walk = [n for n, _, _ in named_tensors(train_net)]
        assert store.names == walk
