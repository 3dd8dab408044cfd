"""Binary PGM/PPM images, tensor conversion, and patch extraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor


class PPMError(ValueError):
    def __init__(self, msg: str, offset: int, path=None):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{msg} (byte offset {offset})")
        self.offset = offset


@dataclass
class Image8:
    """8-bit image; ``pixels`` is H×W×C uint8 (row-major, interleaved)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"image must be H×W×{{1,3}}, got {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise ValueError("samples out of [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = np.ascontiguousarray(px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other) -> bool:
        return isinstance(other, Image8) and np.array_equal(self.pixels, other.pixels)


@dataclass
class PatchPair:
    lr: Image8
    hr: Image8
    label: int
    clean_lr: Image8 | None = None
    preset: str = ""


@dataclass
class PatchSet:
    scale: int
    patches: list[PatchPair] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.patches)

    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.patches], dtype=np.int64)

    def append(self, pair: PatchPair) -> None:
        lr, hr = pair.lr, pair.hr
        if hr.width != lr.width * self.scale or hr.height != lr.height * self.scale:
            raise ValueError(
                f"pair sizes {lr.width}x{lr.height} -> {hr.width}x{hr.height} disagree with scale {self.scale}"
            )
        self.patches.append(pair)


_WS = b" \t\n\r\x0b\x0c"


def _header_token(blob: bytes, pos: int, path) -> tuple[bytes, int]:
    while pos < len(blob):
        ch = blob[pos : pos + 1]
        if ch == b"#":
            end = blob.find(b"\n", pos)
            pos = len(blob) if end < 0 else end + 1
        elif ch in _WS:
            pos += 1
        else:
            break
    start = pos
    while pos < len(blob) and blob[pos : pos + 1] not in _WS and blob[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PPMError("truncated header", start, path)
    return blob[start:pos], pos


def parse_ppm(blob: bytes, path=None) -> Image8:
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise PPMError(f"malformed magic {magic!r}", 0, path)
    channels = 1 if magic == b"P5" else 3
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        tok, new = _header_token(blob, pos, path)
        if not tok.isdigit():
            raise PPMError(f"bad {name} {tok!r}", pos, path)
        fields.append(int(tok))
        pos = new
    width, height, maxval = fields
    if maxval != 255:
        raise PPMError(f"unsupported maxval {maxval}", pos, path)
    if pos >= len(blob) or blob[pos : pos + 1] not in _WS:
        raise PPMError("missing whitespace before raster", pos, path)
    pos += 1
    expected = width * height * channels
    body = blob[pos:]
    if len(body) != expected:
        kind = "truncated body" if len(body) < expected else "trailing bytes after body"
        raise PPMError(f"{kind}: expected {expected} bytes, found {len(body)}", pos, path)
    px = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)
    return Image8(px.copy())


def load_ppm(path) -> Image8:
    return parse_ppm(Path(path).read_bytes(), path)


def encode_ppm(img: Image8) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    return magic + f"\n{img.width} {img.height}\n255\n".encode("ascii") + img.data


def save_ppm(img: Image8, path) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_ppm(img))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def to_tensor(img: Image8) -> Tensor:
    return Tensor(img.pixels.transpose(2, 0, 1)[None].astype(np.float64) / 255.0)


def quantize(x: np.ndarray) -> np.ndarray:
    """[0,1] floats -> uint8, clamped, rounding half away from zero."""
    v = np.clip(x, 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def from_tensor(t: Tensor | np.ndarray, index: int = 0) -> Image8:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if data.ndim == 4:
        data = data[index]
    return Image8(quantize(data).transpose(1, 2, 0))


def extract_patches(img: Image8, patch: int, stride: int, limit: int | None = None) -> list[Image8]:
    """Raster-order grid of full patches, truncated to ``limit``."""
    if patch > min(img.width, img.height):
        raise ValueError(f"patch {patch} larger than image {img.width}x{img.height}")
    if stride < 1:
        raise ValueError("stride must be positive")
    out = []
    for y in range(0, img.height - patch + 1, stride):
        for x in range(0, img.width - patch + 1, stride):
            if limit is not None and len(out) >= limit:
                return out
            out.append(Image8(img.pixels[y : y + patch, x : x + patch].copy()))
    return out


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".ppm", ".pgm"))
    if not files:
        raise FileNotFoundError(f"no .ppm/.pgm images in {directory}")
    return files


def load_dir(directory) -> list[tuple[str, Image8]]:
    return [(p.name, load_ppm(p)) for p in list_images(directory)]


def crop_to_multiple(img: Image8, m: int) -> Image8:
    h, w = img.height - img.height % m, img.width - img.width % m
    return Image8(img.pixels[:h, :w].copy())
