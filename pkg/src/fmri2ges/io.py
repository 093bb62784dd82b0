"""Binary checkpoint and dataset-container formats, plus key=value config text.

Checkpoint layout (little-endian)::

    b"FG2C"  u32 version  u32 n_entries
    per entry: u32 name_len, name (utf-8), u8 dtype, u32 rank, u64 dims[rank], payload
    u32 crc32 of every preceding byte

Dataset arrays use the same entry encoding after a b"F2GB" magic, one array
per file, with their own trailing CRC. A directory's ``manifest.txt`` lists
splits, array files and the config echo.
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CKPT_MAGIC = b"FG2C"
ARRAY_MAGIC = b"F2GB"
VERSION = 1

# dtype codes; 0 and 1 are the float formats, the rest carry text and indices
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1"), 3: np.dtype("<i8")}
CODES = {v: k for k, v in DTYPES.items()}
META_ENTRY = "__meta__"


class FormatError(ValueError):
    """Malformed, truncated or corrupted file."""


def _code_for(a: np.ndarray) -> int:
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    if dt.kind == "f":
        return 0 if dt.itemsize == 4 else 1
    if dt.kind == "b" or (dt.kind == "u" and dt.itemsize == 1):
        return 2
    if dt.kind in "iu":
        return 3
    raise TypeError(f"cannot store arrays of dtype {a.dtype}")


def _encode_entry(name: str, a) -> bytes:
    a = np.asarray(a)
    code = _code_for(a)
    if a.dtype.kind == "f" and a.dtype.itemsize not in (4, 8):
        a = a.astype(np.float64)
    # ascontiguousarray would promote 0-d arrays to 1-d
    a = np.asarray(a, dtype=DTYPES[code]).copy(order="C")
    nb = name.encode("utf-8")
    head = struct.pack(f"<I{len(nb)}sBI", len(nb), nb, code, a.ndim)
    return head + struct.pack(f"<{a.ndim}Q", *a.shape) + a.tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("unexpected end of data")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def entry(self) -> tuple[str, np.ndarray]:
        (n,) = self.unpack("<I")
        name = self.take(n).decode("utf-8")
        code, rank = self.unpack("<BI")
        if code not in DTYPES:
            raise FormatError(f"unknown dtype code {code} for {name!r}")
        if rank > 32:
            raise FormatError(f"implausible rank {rank} for {name!r}")
        dims = self.unpack(f"<{rank}Q")
        dt = DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(self.take(count * dt.itemsize), dtype=dt).reshape(dims)
        return name, data.copy()


def _check_crc(buf: bytes) -> bytes:
    if len(buf) < 4:
        raise FormatError("file too short")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("CRC mismatch: file is corrupted")
    return body


# ------------------------------------------------------------- config text

def format_kv(d: dict) -> str:
    lines = []
    for k in sorted(d):
        v = d[k]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        s = str(v)
        if "\n" in s or "=" in str(k):
            raise ValueError(f"cannot encode {k!r} as key=value")
        lines.append(f"{k} = {s}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {no}: expected key = value, got {raw!r}")
        k, v = line.split("=", 1)
        k = k.strip()
        if not k:
            raise ValueError(f"line {no}: empty key")
        out[k] = v.strip()
    return out


def read_config(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="ascii"))


# -------------------------------------------------------------- checkpoint

@dataclass
class Checkpoint:
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)      # str -> str config echo

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def group(self, prefix: str) -> dict:
        """Arrays under ``prefix/`` with the prefix stripped."""
        p = prefix.rstrip("/") + "/"
        return {k[len(p):]: v for k, v in self.arrays.items() if k.startswith(p)}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    entries = dict(ckpt.arrays)
    if META_ENTRY in entries:
        raise ValueError(f"{META_ENTRY!r} is reserved")
    if ckpt.meta:
        text = format_kv({k: v for k, v in ckpt.meta.items()})
        entries[META_ENTRY] = np.frombuffer(text.encode("ascii"), dtype=np.uint8)
    parts = [CKPT_MAGIC, struct.pack("<II", VERSION, len(entries))]
    parts += [_encode_entry(k, entries[k]) for k in sorted(entries)]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    body = _check_crc(buf)
    r = _Reader(body)
    if r.take(4) != CKPT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, n = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    arrays, meta = {}, {}
    for _ in range(n):
        name, a = r.entry()
        if name in arrays:
            raise FormatError(f"duplicate entry {name!r}")
        arrays[name] = a
    if r.pos != len(body):
        raise FormatError("trailing bytes after the last entry")
    if META_ENTRY in arrays:
        meta = parse_kv(arrays.pop(META_ENTRY).tobytes().decode("ascii"))
    return Checkpoint(arrays, meta)


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    _atomic_write(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


# ------------------------------------------------------- dataset container

def encode_array(a) -> bytes:
    body = ARRAY_MAGIC + _encode_entry("", a)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_array(buf: bytes) -> np.ndarray:
    body = _check_crc(buf)
    r = _Reader(body)
    if r.take(4) != ARRAY_MAGIC:
        raise FormatError("not a dataset array (bad magic)")
    _, a = r.entry()
    if r.pos != len(body):
        raise FormatError("trailing bytes in array file")
    return a


def write_dataset(root, splits: dict, meta: dict) -> None:
    """``splits`` maps split name -> list of records (dict name -> array).

    Arrays go to ``<split>/<index>.<name>.f2gb``; the manifest lists them with
    their shapes next to the config echo in ``meta``.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {f"meta.{k}": v for k, v in meta.items()}
    manifest["format"] = "F2GB-dataset"
    manifest["version"] = VERSION
    manifest["splits"] = ",".join(splits)
    for split, records in splits.items():
        manifest[f"split.{split}.records"] = len(records)
        for i, rec in enumerate(records):
            for name in sorted(rec):
                a = np.asarray(rec[name])
                rel = f"{split}/{i:04d}.{name}.f2gb"
                _atomic_write(root / rel, encode_array(a))
                manifest[f"array.{split}.{i:04d}.{name}"] = rel
                manifest[f"shape.{split}.{i:04d}.{name}"] = "x".join(map(str, a.shape)) or "-"
    _atomic_write(root / "manifest.txt", format_kv(manifest).encode("ascii"))


def read_manifest(root) -> dict[str, str]:
    path = Path(root) / "manifest.txt"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.txt in {root}")
    m = parse_kv(path.read_text(encoding="ascii"))
    if m.get("format") != "F2GB-dataset":
        raise FormatError(f"{path} is not a dataset manifest")
    return m


def read_dataset(root, splits=None) -> tuple[dict, dict]:
    """Returns ``(splits, meta)`` mirroring :func:`write_dataset`."""
    root = Path(root)
    m = read_manifest(root)
    names = [s for s in m.get("splits", "").split(",") if s]
    want = names if splits is None else list(splits)
    out = {}
    for split in want:
        if split not in names:
            raise KeyError(f"dataset has no split {split!r}")
        n = int(m[f"split.{split}.records"])
        recs = [{} for _ in range(n)]
        prefix = f"array.{split}."
        for key, rel in m.items():
            if not key.startswith(prefix):
                continue
            idx, name = key[len(prefix):].split(".", 1)
            path = root / rel
            if not path.is_file():
                raise FormatError(f"manifest references missing file {rel}")
            a = decode_array(path.read_bytes())
            shape = m.get(f"shape.{split}.{idx}.{name}")
            if shape is not None and ("x".join(map(str, a.shape)) or "-") != shape:
                raise FormatError(f"{rel}: shape {a.shape} disagrees with manifest {shape}")
            recs[int(idx)][name] = a
        out[split] = recs
    meta = {k[5:]: v for k, v in m.items() if k.startswith("meta.")}
    return out, meta
