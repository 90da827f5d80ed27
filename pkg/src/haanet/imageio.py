"""P6 pixmaps, dataset manifests and key = value config files."""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.txt"
MANIFEST_FIELDS = ("pair_id", "seed", "beta", "a_r", "a_g", "a_b")


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- P6


def to_bytes(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats (3, h, w) -> uint8 (h, w, 3) with round-half-up."""
    img = np.asarray(img, dtype=np.float64)
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return np.ascontiguousarray(q.transpose(1, 2, 0))


def encode_ppm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.broadcast_to(img, (3,) + img.shape)
    if img.ndim != 3 or img.shape[0] != 3:
        raise FormatError(f"expected a (3, h, w) image, got {img.shape}")
    _, h, w = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + to_bytes(img).tobytes()


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def decode_ppm(blob: bytes) -> np.ndarray:
    """Binary P6 (maxval 255) -> float64 (3, h, w) in [0, 1]."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(blob, pos)
        if m is None:
            raise FormatError("truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic != b"P6":
        raise FormatError(f"not a binary P6 pixmap (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"only 8-bit pixmaps are supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    if len(blob) - pos < w * h * 3:
        raise FormatError(f"truncated PPM pixel data: need {w * h * 3} bytes, have {len(blob) - pos}")
    raw = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def save_ppm(path, img) -> None:
    Path(path).write_bytes(encode_ppm(img))


def load_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def side_by_side(*images: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(i) for i in images], axis=-1)


# ---------------------------------------------------------------- manifest


@dataclass
class ManifestRow:
    pair_id: str
    seed: int
    beta: float
    airlight: tuple[float, float, float]

    def files(self) -> dict[str, str]:
        return {kind: f"{self.pair_id}_{kind}.ppm" for kind in ("clean", "hazy", "trans")}


def write_manifest(path, rows: list[ManifestRow]) -> None:
    lines = ["# haanet synthetic haze pairs: I = J t + A (1 - t)", " ".join(MANIFEST_FIELDS)]
    for r in rows:
        lines.append(f"{r.pair_id} {r.seed} {r.beta!r} " + " ".join(repr(float(a)) for a in r.airlight))
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    header_seen = False
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if not header_seen:
            if tuple(parts) != MANIFEST_FIELDS:
                raise FormatError(f"{path}:{lineno}: unexpected manifest header {parts}")
            header_seen = True
            continue
        if len(parts) != len(MANIFEST_FIELDS):
            raise FormatError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields")
        rows.append(ManifestRow(parts[0], int(parts[1]), float(parts[2]),
                                tuple(float(p) for p in parts[3:6])))
    return rows


# ---------------------------------------------------------------- config files


def parse_config(text: str) -> dict[str, str]:
    """``key = value`` per line, ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def coerce_fields(values: dict[str, str], *targets) -> list[dict]:
    """Split raw config values across dataclass types, converting each value
    to the field's default type. Unknown keys raise."""
    known = {}
    for i, cls in enumerate(targets):
        for f in fields(cls):
            known[f.name] = (i, type(f.default))
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise FormatError(f"unknown config keys: {', '.join(unknown)}")
    split: list[dict] = [{} for _ in targets]
    for key, text in values.items():
        i, typ = known[key]
        if typ is bool:
            if text.lower() not in ("true", "false", "1", "0"):
                raise FormatError(f"{key}: expected a boolean, got {text!r}")
            split[i][key] = text.lower() in ("true", "1")
        else:
            try:
                split[i][key] = typ(text)
            except ValueError:
                raise FormatError(f"{key}: cannot parse {text!r} as {typ.__name__}") from None
    return split
