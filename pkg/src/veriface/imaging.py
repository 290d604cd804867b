"""Image loading, color conversion, eye-based alignment, and skin masking.

A raw 8-bit RGB image (PNG or binary PPM) enters here and leaves as a
FaceSample: a luma plane scaled to [0, 1] plus Cr/Cb chroma planes, all
cropped to the canonical face geometry.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, ConfigError, ImageFormatError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeometryConfig:
    """Canonical crop size and where the two eyes land inside it.

    Eye targets are (row, col) fractions of the crop, so the same config
    scales to any resolution.
    """

    rows: int = 61
    cols: int = 57
    left_eye_target: tuple = (0.38, 0.30)
    right_eye_target: tuple = (0.38, 0.70)

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ConfigError(f"crop must be at least 2x2, got {self.rows}x{self.cols}")
        for name, (r, c) in (("left_eye_target", self.left_eye_target),
                             ("right_eye_target", self.right_eye_target)):
            if not (0.0 <= r <= 1.0 and 0.0 <= c <= 1.0):
                raise ConfigError(f"{name} {r, c} outside the unit square")
        if self.left_eye_target[1] >= self.right_eye_target[1]:
            raise ConfigError("left eye target must be left of the right eye target")

    @property
    def left_eye_px(self):
        """Left eye target in (row, col) pixel coordinates."""
        return (self.left_eye_target[0] * self.rows, self.left_eye_target[1] * self.cols)

    @property
    def right_eye_px(self):
        return (self.right_eye_target[0] * self.rows, self.right_eye_target[1] * self.cols)


@dataclass(frozen=True)
class SkinBounds:
    """Chroma box accepted as skin. Defaults are the common Cr/Cb heuristic."""

    cr_lo: float = 133.0
    cr_hi: float = 173.0
    cb_lo: float = 77.0
    cb_hi: float = 127.0

    def __post_init__(self):
        if self.cr_lo > self.cr_hi:
            raise ConfigError(f"empty Cr range [{self.cr_lo}, {self.cr_hi}]")
        if self.cb_lo > self.cb_hi:
            raise ConfigError(f"empty Cb range [{self.cb_lo}, {self.cb_hi}]")


@dataclass
class RawImage:
    """8-bit RGB image, pixels shaped (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ImageFormatError(f"expected (h, w, 3) pixel array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise ImageFormatError("channel values outside [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class FaceSample:
    """Aligned face crop: luma in [0, 1] plus Cr/Cb planes in [0, 255]."""

    grey: np.ndarray
    cr: np.ndarray
    cb: np.ndarray
    subject_id: str = ""
    session: int = 0
    oob_pixels: int = 0  # output pixels that sampled outside the source image

    def __post_init__(self):
        self.grey = np.asarray(self.grey, dtype=float)
        self.cr = np.asarray(self.cr, dtype=float)
        self.cb = np.asarray(self.cb, dtype=float)
        if not (self.grey.shape == self.cr.shape == self.cb.shape):
            raise ValueError("grey, cr, cb planes must share one shape")
        if self.grey.ndim != 2:
            raise ValueError("planes must be 2-D matrices")
        if self.grey.size and (self.grey.min() < -1e-9 or self.grey.max() > 1 + 1e-9):
            raise ValueError("grey plane must lie in [0, 1]")

    @property
    def shape(self):
        return self.grey.shape


def rgb_to_ycbcr(r, g, b):
    """Full-range BT.601 conversion; returns (y, cr, cb) clamped to [0, 255].

    Chroma is computed from channel differences so that any achromatic
    input (r == g == b) yields cr == cb == 128.0 exactly.
    """
    r = np.asarray(r, dtype=float)
    g = np.asarray(g, dtype=float)
    b = np.asarray(b, dtype=float)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 + 0.168736 * (b - r) + 0.331264 * (b - g)
    cr = 128.0 + 0.418688 * (r - g) + 0.081312 * (r - b)
    y = np.clip(y, 0.0, 255.0)
    cr = np.clip(cr, 0.0, 255.0)
    cb = np.clip(cb, 0.0, 255.0)
    if y.ndim == 0:
        return float(y), float(cr), float(cb)
    return y, cr, cb


def ycbcr_planes(img: RawImage):
    """Split a RawImage into float (y, cr, cb) planes."""
    px = img.pixels.astype(float)
    return rgb_to_ycbcr(px[:, :, 0], px[:, :, 1], px[:, :, 2])


def skin_mask(cr, cb, bounds: SkinBounds | None = None):
    """Pointwise chroma-box test; True where the pixel looks like skin."""
    if bounds is None:
        bounds = SkinBounds()
    cr = np.asarray(cr, dtype=float)
    cb = np.asarray(cb, dtype=float)
    if cr.shape != cb.shape:
        raise ValueError(f"cr shape {cr.shape} != cb shape {cb.shape}")
    return ((cr >= bounds.cr_lo) & (cr <= bounds.cr_hi)
            & (cb >= bounds.cb_lo) & (cb <= bounds.cb_hi))


def _bilinear_sample(plane, ys, xs):
    """Bilinear lookup at fractional (ys, xs); out-of-bounds points get the
    plane mean. Returns (values, oob_mask)."""
    h, w = plane.shape
    inb = (ys >= 0.0) & (ys <= h - 1.0) & (xs >= 0.0) & (xs <= w - 1.0)
    ysc = np.clip(ys, 0.0, h - 1.0)
    xsc = np.clip(xs, 0.0, w - 1.0)
    y0 = np.minimum(np.floor(ysc).astype(int), h - 2)
    x0 = np.minimum(np.floor(xsc).astype(int), w - 2)
    fy = ysc - y0
    fx = xsc - x0
    v = (plane[y0, x0] * (1.0 - fy) * (1.0 - fx)
         + plane[y0, x0 + 1] * (1.0 - fy) * fx
         + plane[y0 + 1, x0] * fy * (1.0 - fx)
         + plane[y0 + 1, x0 + 1] * fy * fx)
    return np.where(inb, v, plane.mean()), ~inb


def align_and_crop(img: RawImage, left_eye, right_eye, geo: GeometryConfig,
                   subject_id: str = "", session: int = 0) -> FaceSample:
    """Rotate, scale, and translate the image so the annotated eyes land on
    the geometry's eye targets, then crop to rows x cols.

    Eye coordinates are (row, col) in source pixels. Output pixels that map
    outside the source are filled with the plane mean and counted in the
    returned sample's oob_pixels.
    """
    h, w = img.height, img.width
    if h < 2 or w < 2:
        raise ImageFormatError(f"source image {h}x{w} too small to resample")
    for name, (er, ec) in (("left", left_eye), ("right", right_eye)):
        if not (0.0 <= er <= h - 1.0 and 0.0 <= ec <= w - 1.0):
            raise AlignmentError(f"{name} eye {er, ec} outside the {h}x{w} image")
    # Two point pairs determine the similarity exactly; complex arithmetic
    # keeps rotation + uniform scale + translation in one multiply-add.
    z1 = complex(left_eye[1], left_eye[0])
    z2 = complex(right_eye[1], right_eye[0])
    if abs(z2 - z1) < 1e-9:
        raise AlignmentError("eye annotations coincide; alignment is degenerate")
    t1 = geo.left_eye_px
    t2 = geo.right_eye_px
    w1 = complex(t1[1], t1[0])
    w2 = complex(t2[1], t2[0])
    a = (w2 - w1) / (z2 - z1)
    b = w1 - a * z1

    rr, cc = np.meshgrid(np.arange(geo.rows, dtype=float),
                         np.arange(geo.cols, dtype=float), indexing="ij")
    src = (cc + 1j * rr - b) / a
    xs = src.real
    ys = src.imag

    y_plane, cr_plane, cb_plane = ycbcr_planes(img)
    y_out, oob = _bilinear_sample(y_plane, ys, xs)
    cr_out, _ = _bilinear_sample(cr_plane, ys, xs)
    cb_out, _ = _bilinear_sample(cb_plane, ys, xs)
    oob_count = int(oob.sum())
    if oob_count:
        log.warning("alignment for subject %r sampled %d pixels outside the "
                    "source; filled with plane means", subject_id, oob_count)
    grey = np.clip(y_out / 255.0, 0.0, 1.0)
    return FaceSample(grey=grey, cr=cr_out, cb=cb_out, subject_id=subject_id,
                      session=session, oob_pixels=oob_count)


# ---------------------------------------------------------------------------
# Image file I/O: binary PPM (P6) is handled natively, PNG via Pillow.

def _parse_ppm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P6"):
        raise ImageFormatError("not a binary (P6) PPM file")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise ImageFormatError("truncated PPM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            eol = data.find(b"\n", pos)
            pos = len(data) if eol < 0 else eol + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            fields.append(data[pos:end])
            pos = end
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ImageFormatError(f"bad PPM header fields {fields}") from exc
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PPM supported, maxval={maxval}")
    pos += 1  # single whitespace byte separates header from raster
    raster = data[pos:pos + width * height * 3]
    if len(raster) != width * height * 3:
        raise ImageFormatError("PPM raster shorter than header promises")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def save_ppm(path, pixels: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 array as binary PPM."""
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = px.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(px.tobytes())


def load_image(path) -> RawImage:
    """Load an 8-bit RGB image from PNG or binary PPM."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
            fh.seek(0)
            data = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from exc
    if head.startswith(b"P6"):
        return RawImage(_parse_ppm(data))
    if head.startswith(b"\x89PNG"):
        import io

        from PIL import Image

        try:
            with Image.open(io.BytesIO(data)) as im:
                rgb = im.convert("RGB")
                return RawImage(np.asarray(rgb, dtype=np.uint8))
        except Exception as exc:
            raise ImageFormatError(f"cannot decode PNG {path}: {exc}") from exc
    raise ImageFormatError(f"unsupported image format in {path}")
