from __future__ import annotations

import gzip
import math
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amstream import codec
from amstream.harness.golden import check_golden, golden_cases

GOLDEN = Path(__file__).parent / "golden"


def parse_delta_by_hand(data: bytes):
    """Independent reader: struct offsets, stdlib gzip, bit loop, struct 'e' halves."""
    assert data[:4] == b"AMSD" and data[4] == 1
    phase, total, mlen = struct.unpack_from("<III", data, 5)
    bits = gzip.decompress(data[17:17 + mlen])
    mask = [(bits[j // 8] >> (j % 8)) & 1 for j in range(total)]
    (count,) = struct.unpack_from("<I", data, 17 + mlen)
    start = 21 + mlen
    values = [struct.unpack_from("<e", data, start + 2 * i)[0] for i in range(count)]
    assert start + 2 * count == len(data)
    return phase, mask, values


def random_delta(rng, total=None):
    total = total or int(rng.integers(1, 400))
    mask = rng.random(total) < rng.random()
    vals = rng.normal(0, 10, int(mask.sum()))
    return codec.ModelDelta(int(rng.integers(0, 2**32)), mask, vals)


# -- deltas ------------------------------------------------------------------


def test_thousand_random_deltas_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = random_delta(rng)
        assert codec.decode_delta(codec.encode_delta(d)) == d


def test_single_coordinate_round_trip_and_layout():
    mask = np.zeros(13, bool)
    mask[9] = True
    d = codec.ModelDelta(5, mask, [1.5])
    data = codec.encode_delta(d)
    assert codec.decode_delta(data) == d
    phase, bits, values = parse_delta_by_hand(data)
    assert phase == 5 and bits == mask.astype(int).tolist() and values == [1.5]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_encoding_matches_independent_reader(seed):
    d = random_delta(np.random.default_rng(seed))
    phase, bits, values = parse_delta_by_hand(codec.encode_delta(d))
    assert phase == d.phase
    assert bits == d.mask.astype(int).tolist()
    assert values == [float(v) for v in d.values]


def test_bad_magic():
    data = bytearray(codec.encode_delta(random_delta(np.random.default_rng(1))))
    data[0] ^= 0xFF
    with pytest.raises(codec.BadMagic):
        codec.decode_delta(bytes(data))


def test_unsupported_version():
    data = bytearray(codec.encode_delta(random_delta(np.random.default_rng(1))))
    data[4] = 2
    with pytest.raises(codec.UnsupportedVersion):
        codec.decode_delta(bytes(data))


def test_truncated_payload():
    data = codec.encode_delta(random_delta(np.random.default_rng(2), total=100))
    for cut in (3, 10, len(data) - 1):
        with pytest.raises(codec.Truncated):
            codec.decode_delta(data[:cut])


def test_count_inconsistent_with_popcount():
    mask = np.array([1, 0, 1, 1], bool)
    data = bytearray(codec.encode_delta(codec.ModelDelta(1, mask, [1.0, 2.0, 3.0])))
    mlen = struct.unpack_from("<I", data, 13)[0]
    struct.pack_into("<I", data, 17 + mlen, 2)
    with pytest.raises(codec.IntegrityError):
        codec.decode_delta(bytes(data[:-2]))


def test_error_classes_are_distinct():
    kinds = {codec.BadMagic, codec.UnsupportedVersion, codec.Truncated, codec.IntegrityError}
    assert len(kinds) == 4
    assert all(issubclass(k, codec.CodecError) for k in kinds)


def test_apply_delta():
    mask = np.array([0, 1, 0], bool)
    assert codec.apply_delta(np.array([1.0, 2.0, 3.0]), codec.ModelDelta(1, mask, [5.0])).tolist() == [1, 5, 3]
    empty = codec.ModelDelta(1, np.zeros(3, bool), [])
    assert codec.apply_delta(np.array([1.0, 2.0, 3.0]), empty).tolist() == [1, 2, 3]
    with pytest.raises(ValueError):
        codec.apply_delta(np.zeros(4), empty)


def test_binary16_rounding_of_one_tenth():
    d = codec.ModelDelta.from_params(1, np.array([0.1]), np.array([True]))
    out = codec.apply_delta(np.zeros(1), codec.decode_delta(codec.encode_delta(d)))
    # 0.1 = 1.6 * 2^-4; 10 mantissa bits -> round(0.6 * 1024) = 614
    assert out[0] == (1 + 614 / 1024) * 2**-4 == 0.0999755859375


def test_binary16_round_half_to_even():
    # 1 + 2^-11 is exactly halfway between 1 and the next half; ties go to even (1.0)
    assert float(codec.to_half([1 + 2**-11])[0]) == 1.0
    assert float(codec.to_half([1 + 3 * 2**-11])[0]) == 1 + 2**-9


def test_encoded_size_nondecreasing_in_mask_size():
    rng = np.random.default_rng(3)
    order = rng.permutation(500)
    sizes = []
    for k in range(0, 501, 25):
        mask = np.zeros(500, bool)
        mask[order[:k]] = True
        # a nested sequence of masks; compressed bitmask varies by a few bytes, values grow 2 B each
        sizes.append(len(codec.encode_delta(codec.ModelDelta(1, mask, np.ones(k)))))
    assert all(b >= a for a, b in zip(sizes, sizes[1:]))


# -- payload arithmetic ------------------------------------------------------------


def test_value_section_sizes_at_two_million_params():
    assert codec.value_section_size(2_000_000, 0.05) == 200_000
    assert codec.value_section_size(2_000_000, 1.0) == 4_000_000
    # kilobits per second when one delta ships every 10 s
    assert 200_000 * 8 / 10 / 1000 == 160.0
    assert 4_000_000 * 8 / 10 / 1e6 == 3.2


def test_deterministic_gzip_header():
    blob = codec.gzip_bytes(b"abc" * 100)
    assert blob[:4] == b"\x1f\x8b\x08\x00"
    assert blob[4:8] == b"\x00\x00\x00\x00"  # mtime
    assert blob[9] == 255  # OS unknown
    assert gzip.decompress(blob) == b"abc" * 100
    assert codec.gzip_bytes(b"abc" * 100) == blob


def test_corrupt_compressed_section():
    with pytest.raises(codec.CodecError):
        codec.gunzip_bytes(b"\x1f\x8b\x08\x00garbage")


# -- uplink ------------------------------------------------------------------


def test_hundred_uplink_batches_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(1, 12))
        ts = np.sort(rng.random(n) * 600).astype(np.float32)
        feats = rng.normal(0, 3, size=(n, 64, 8))
        batch = codec.UplinkBatch(int(rng.integers(0, 100)), ts, feats)
        out = codec.decode_uplink(codec.encode_uplink(batch), 8)
        assert out.client_id == batch.client_id
        assert np.array_equal(out.timestamps, ts)
        assert np.array_equal(out.features, feats.astype(np.float16).astype(np.float64))
        # within half a binary16 ulp of the original
        ulp = np.spacing(np.abs(feats).astype(np.float16)).astype(np.float64)
        assert np.all(np.abs(out.features - feats) <= ulp / 2 + 1e-12)


def test_uplink_payload_size_bound():
    rng = np.random.default_rng(5)
    batch = codec.UplinkBatch(1, np.arange(10, dtype=np.float32), rng.normal(size=(10, 64, 8)))
    data = codec.encode_uplink(batch)
    assert 10 * 64 * 8 * 2 == 10_240
    plen = struct.unpack_from("<I", data, 13 + 4 * 10)[0]
    # deflate stored-block worst case plus the 18-byte gzip frame
    assert plen <= 10_240 + 5 * math.ceil(10_240 / 16_383) + 18
    assert codec.encode_uplink(batch) == data


def test_uplink_rejects_empty_and_unsorted():
    with pytest.raises(ValueError):
        codec.encode_uplink(codec.UplinkBatch(0, np.zeros(0, np.float32), np.zeros((0, 4, 8))))
    with pytest.raises(ValueError):
        codec.encode_uplink(codec.UplinkBatch(0, np.array([2.0, 1.0], np.float32), np.zeros((2, 4, 8))))


def test_uplink_bad_magic():
    data = bytearray(codec.encode_uplink(codec.UplinkBatch(0, np.zeros(1, np.float32), np.zeros((1, 4, 8)))))
    data[1] = 0
    with pytest.raises(codec.BadMagic):
        codec.decode_uplink(bytes(data), 8)


# -- control record ------------------------------------------------------------


def test_control_record_is_twelve_bytes():
    rec = codec.ControlRecord(0.5, 12.0, codec.FLAG_SLOWDOWN)
    data = codec.encode_control(rec)
    assert len(data) == codec.CONTROL_SIZE == 12
    assert struct.unpack("<ffI", data) == (0.5, 12.0, 1)
    assert codec.decode_control(data) == rec
    with pytest.raises(codec.Truncated):
        codec.decode_control(data[:11])


# -- golden bytes ------------------------------------------------------------


def test_golden_fixtures_stable():
    assert check_golden(GOLDEN) == []


def test_golden_fixtures_decode():
    cases = golden_cases()
    small = codec.decode_delta(cases["delta_small"])
    assert small.phase == 7 and small.indices.tolist() == [0, 3, 17, 100, 211]
    assert float(small.values[2]) == 65504.0
    up = codec.decode_uplink(cases["uplink_three"], 8)
    assert up.client_id == 5 and up.features.shape == (3, 4, 8)
