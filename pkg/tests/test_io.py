import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from fmri2ges.io import (Checkpoint, FormatError, decode_array, decode_checkpoint, encode_array,
                         encode_checkpoint, format_kv, load_checkpoint, parse_kv, read_dataset,
                         read_manifest, save_checkpoint, write_dataset)

DT = st.sampled_from([np.float32, np.float64, np.uint8, np.int64])


def _arrays():
    return DT.flatmap(lambda dt: hnp.arrays(dt, hnp.array_shapes(min_dims=0, max_dims=3,
                                                                 min_side=0, max_side=5)))


def test_layout_by_hand():
    buf = encode_checkpoint(Checkpoint({"w": np.array([1.5, -2.0], dtype=np.float32)}))
    assert buf[:4] == b"FG2C"
    assert struct.unpack("<II", buf[4:12]) == (1, 1)
    assert struct.unpack("<I", buf[12:16]) == (1,)
    assert buf[16:17] == b"w"
    code, rank = struct.unpack("<BI", buf[17:22])
    assert (code, rank) == (0, 1)
    assert struct.unpack("<Q", buf[22:30]) == (2,)
    assert np.frombuffer(buf[30:38], "<f4").tolist() == [1.5, -2.0]
    assert struct.unpack("<I", buf[38:]) == (zlib.crc32(buf[:38]),)


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.text("abcxyz/._0123", min_size=1, max_size=12), _arrays(), max_size=5))
def test_checkpoint_round_trip_bytes(arrays):
    ck = Checkpoint(arrays, {"seed": "3", "note": "x y"})
    buf = encode_checkpoint(ck)
    back = decode_checkpoint(buf)
    assert back.meta == ck.meta
    assert set(back.arrays) == set(arrays)
    for k, a in arrays.items():
        assert back[k].dtype == a.dtype.newbyteorder("<") or back[k].dtype == a.dtype
        assert back[k].shape == a.shape
        assert back[k].tobytes() == np.ascontiguousarray(a).tobytes()
    assert encode_checkpoint(back) == buf


def test_checkpoint_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ck = Checkpoint({"a": rng.standard_normal((3, 4)), "b/c": rng.standard_normal(5).astype(np.float32),
                     "i": np.arange(4)}, {"k": "v"})
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, ck)
    raw = p.read_bytes()
    save_checkpoint(tmp_path / "m2.ckpt", load_checkpoint(p))
    assert (tmp_path / "m2.ckpt").read_bytes() == raw


@pytest.mark.parametrize("pos", [0, 5, 20, -1, -6])
def test_flipped_byte_rejected(pos):
    buf = bytearray(encode_checkpoint(Checkpoint({"w": np.arange(6.0)}, {"a": "1"})))
    buf[pos] ^= 0x40
    with pytest.raises(FormatError):
        decode_checkpoint(bytes(buf))


def test_every_single_byte_flip_detected():
    buf = encode_checkpoint(Checkpoint({"w": np.arange(3.0)}))
    for i in range(len(buf)):
        bad = bytearray(buf)
        bad[i] ^= 0x01
        with pytest.raises(FormatError):
            decode_checkpoint(bytes(bad))


def test_truncated_rejected():
    buf = encode_checkpoint(Checkpoint({"w": np.arange(3.0)}))
    for n in (0, 3, len(buf) - 1):
        with pytest.raises(FormatError):
            decode_checkpoint(buf[:n])


def test_valid_crc_bad_structure():
    body = b"FG2C" + struct.pack("<II", 1, 2) + b"\x00"
    with pytest.raises(FormatError):
        decode_checkpoint(body + struct.pack("<I", zlib.crc32(body)))
    body = b"XXXX" + struct.pack("<II", 1, 0)
    with pytest.raises(FormatError):
        decode_checkpoint(body + struct.pack("<I", zlib.crc32(body)))
    body = b"FG2C" + struct.pack("<II", 9, 0)
    with pytest.raises(FormatError):
        decode_checkpoint(body + struct.pack("<I", zlib.crc32(body)))


def test_reserved_name_and_bad_dtype():
    with pytest.raises(ValueError):
        encode_checkpoint(Checkpoint({"__meta__": np.zeros(1)}))
    with pytest.raises(TypeError):
        encode_checkpoint(Checkpoint({"c": np.zeros(2, dtype=complex)}))


def test_array_file_round_trip_and_corruption():
    a = np.random.default_rng(1).standard_normal((4, 2))
    buf = encode_array(a)
    assert buf[:4] == b"F2GB"
    assert decode_array(buf).tobytes() == a.tobytes()
    bad = bytearray(buf)
    bad[10] ^= 1
    with pytest.raises(FormatError):
        decode_array(bytes(bad))


def test_kv_round_trip():
    d = {"b": 2, "a": "x", "l": [1, 2]}
    text = format_kv(d)
    assert text == "a = x\nb = 2\nl = 1,2\n"
    assert parse_kv(text + "# comment\n\n") == {"a": "x", "b": "2", "l": "1,2"}
    with pytest.raises(ValueError):
        parse_kv("novalue\n")
    with pytest.raises(ValueError):
        format_kv({"a": "x\ny"})


def _splits():
    rng = np.random.default_rng(2)
    return {"s1": [{"x": rng.standard_normal((3, 2)), "w": np.arange(5)} for _ in range(2)],
            "s2": [{"x": np.zeros((0, 4))}]}


def test_dataset_round_trip(tmp_path):
    sp = _splits()
    write_dataset(tmp_path / "d", sp, {"seed": 7})
    back, meta = read_dataset(tmp_path / "d")
    assert meta == {"seed": "7"}
    for split, recs in sp.items():
        for r, b in zip(recs, back[split]):
            for k in r:
                assert b[k].tobytes() == r[k].tobytes() and b[k].shape == r[k].shape
    write_dataset(tmp_path / "e", back, meta)
    for f in (tmp_path / "d").rglob("*"):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "e" / f.relative_to(tmp_path / "d")).read_bytes()
    m = read_manifest(tmp_path / "d")
    assert m["splits"] == "s1,s2" and m["split.s1.records"] == "2"


def test_dataset_corruption_and_missing(tmp_path):
    write_dataset(tmp_path, _splits(), {})
    f = tmp_path / "s1" / "0000.x.f2gb"
    raw = bytearray(f.read_bytes())
    raw[-7] ^= 2
    f.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_dataset(tmp_path)
    f.unlink()
    with pytest.raises(FormatError):
        read_dataset(tmp_path)
    with pytest.raises(KeyError):
        read_dataset(tmp_path, ["nope"])
    with pytest.raises(FileNotFoundError):
        read_manifest(tmp_path / "missing")


def test_dataset_shape_cross_check(tmp_path):
    write_dataset(tmp_path, _splits(), {})
    m = (tmp_path / "manifest.txt").read_text()
    (tmp_path / "manifest.txt").write_text(m.replace("shape.s1.0000.x = 3x2", "shape.s1.0000.x = 2x3"))
    with pytest.raises(FormatError):
        read_dataset(tmp_path)
