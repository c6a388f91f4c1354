"""Middlebury .flo reading/writing and per-box flow aggregation."""

import math
from dataclasses import dataclass

import numpy as np

from core.tracks import BBox
from errors import BadDims, BadMagic, EmptyRegion, NonFinite, TrailingData, Truncated

# Sanity sentinel, spells "PIEH" in little-endian bytes
FLO_MAGIC = 202021.25
HEADER_BYTES = 12
DEFAULT_MAX_PIXELS = 10_000 * 10_000

# Box edges this close to an integer are treated as lying on it
SNAP_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class FlowMap:
    """Dense flow field for one image pair. u/v are read-only float32 grids of shape (height, width)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float32)
        v = np.array(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape or u.size == 0:
            raise BadDims(f"u and v must be equal non-empty 2-D grids, got {u.shape} and {v.shape}")
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FlowMap):
            return NotImplemented
        return np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)

    __hash__ = None


def parse_flo(data: bytes, max_pixels: int = DEFAULT_MAX_PIXELS) -> FlowMap:
    """Decodes a complete .flo byte sequence."""
    if len(data) < 4:
        raise Truncated(f"expected at least {HEADER_BYTES} header bytes, got {len(data)}",
                        expected=HEADER_BYTES, actual=len(data))

    magic = np.frombuffer(data, dtype="<f4", count=1, offset=0)[0]
    if magic != np.float32(FLO_MAGIC):
        raise BadMagic(f"bad magic {bytes(data[:4])!r}, not a .flo file")

    if len(data) < HEADER_BYTES:
        raise Truncated(f"expected at least {HEADER_BYTES} header bytes, got {len(data)}",
                        expected=HEADER_BYTES, actual=len(data))

    width, height = (int(x) for x in np.frombuffer(data, dtype="<i4", count=2, offset=4))
    if width <= 0 or height <= 0:
        raise BadDims(f"invalid dimensions {width}x{height}")
    if width * height > max_pixels:
        raise BadDims(f"{width}x{height} exceeds the cap of {max_pixels} pixels")

    expected = HEADER_BYTES + 8 * width * height
    if len(data) < expected:
        raise Truncated(f"expected {expected} bytes for {width}x{height}, got {len(data)}",
                        expected=expected, actual=len(data))
    if len(data) > expected:
        raise TrailingData(f"{len(data) - expected} bytes after the {width}x{height} payload")

    payload = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=HEADER_BYTES)
    if not np.isfinite(payload).all():
        raise NonFinite("payload contains NaN or Inf")

    # Interleaved (u, v), row-major, top row first
    grid = payload.reshape(height, width, 2)
    return FlowMap(u=grid[..., 0], v=grid[..., 1])


def write_flo(flow: FlowMap) -> bytes:
    """Encodes a FlowMap; inverse of parse_flo."""
    header = np.array([FLO_MAGIC], dtype="<f4").tobytes() + np.array([flow.width, flow.height], dtype="<i4").tobytes()
    payload = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    return header + payload.tobytes()


def read_flo(path, max_pixels: int = DEFAULT_MAX_PIXELS) -> FlowMap:
    with open(path, "rb") as f:
        return parse_flo(f.read(), max_pixels=max_pixels)


def save_flo(path, flow: FlowMap):
    with open(path, "wb") as f:
        f.write(write_flo(flow))


def _edge(value: float) -> int:
    nearest = round(value)
    if abs(value - nearest) < SNAP_TOLERANCE:
        return int(nearest)
    return math.ceil(value)


def pixel_bounds(box: BBox, width: int, height: int):
    """Half-open pixel ranges (x0, x1, y0, y1) of the box clipped to the image.

    A pixel (ix, iy) is inside iff x_ul <= ix < x_ul + width and y_ul <= iy < y_ul + height.
    """
    x0 = max(_edge(box.x_ul), 0)
    x1 = min(_edge(box.x_ul + box.width), width)
    y0 = max(_edge(box.y_ul), 0)
    y1 = min(_edge(box.y_ul + box.height), height)
    return x0, x1, y0, y1


def median_flow(flow: FlowMap, box: BBox) -> float:
    """Median horizontal flow over the pixels covered by the box."""
    x0, x1, y0, y1 = pixel_bounds(box, flow.width, flow.height)
    if x0 >= x1 or y0 >= y1:
        raise EmptyRegion(f"box {box} covers no pixel of the {flow.width}x{flow.height} map")
    # float64 so the even-count mean of the two middle values is not rounded to float32
    return float(np.median(flow.u[y0:y1, x0:x1].astype(np.float64)))


def flow_summary(flow: FlowMap) -> dict:
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    return {
        "width": flow.width,
        "height": flow.height,
        "u_min": float(u.min()),
        "u_max": float(u.max()),
        "u_median": float(np.median(u)),
        "v_min": float(v.min()),
        "v_max": float(v.max()),
    }
