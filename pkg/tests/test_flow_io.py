import math

import numpy as np
import pytest

from core.flow_io import FlowMap, median_flow, parse_flo, pixel_bounds, read_flo, save_flo, write_flo, flow_summary
from core.tracks import BBox
from errors import BadDims, BadMagic, EmptyRegion, FloFormatError, NonFinite, TrailingData, Truncated

MAGIC = b"PIEH"


def header(width, height):
    return MAGIC + width.to_bytes(4, "little", signed=True) + height.to_bytes(4, "little", signed=True)


def test_hand_encoded_single_pixel():
    # u = 2.5 -> 0x40200000, v = -1.0 -> 0xBF800000, little-endian
    data = header(1, 1) + b"\x00\x00\x20\x40" + b"\x00\x00\x80\xbf"
    flow = parse_flo(data)
    assert (flow.width, flow.height) == (1, 1)
    assert flow.u[0, 0] == 2.5
    assert flow.v[0, 0] == -1.0
    assert flow == FlowMap(u=[[2.5]], v=[[-1.0]])


def test_zero_map_is_twenty_bytes():
    data = write_flo(FlowMap(u=[[0.0]], v=[[0.0]]))
    assert len(data) == 20
    assert data[:4] == MAGIC


def test_dimensions_are_encoded_in_header():
    wide = write_flo(FlowMap(u=[[1.0, 2.0]], v=[[3.0, 4.0]]))
    tall = write_flo(FlowMap(u=[[1.0], [2.0]], v=[[3.0], [4.0]]))
    assert wide[:4] == tall[:4]
    assert wide[4:12] != tall[4:12]
    assert wide[4:12] == header(2, 1)[4:12]


def test_layout_is_interleaved_row_major():
    flow = FlowMap(u=[[1.0, 2.0], [3.0, 4.0]], v=[[-1.0, -2.0], [-3.0, -4.0]])
    payload = np.frombuffer(write_flo(flow)[12:], dtype="<f4")
    np.testing.assert_array_equal(payload, [1, -1, 2, -2, 3, -3, 4, -4])


def test_round_trip_is_bit_exact(rng):
    for _ in range(100):
        h, w = rng.integers(1, 20, size=2)
        flow = FlowMap(u=rng.normal(0, 5, (h, w)), v=rng.normal(0, 5, (h, w)))
        data = write_flo(flow)
        assert len(data) == 12 + 8 * w * h
        parsed = parse_flo(data)
        assert parsed == flow
        assert write_flo(parsed) == data


def test_bad_magic():
    with pytest.raises(BadMagic):
        parse_flo(b"XXXX" + header(1, 1)[4:] + bytes(8))


def test_header_without_payload_is_truncated():
    with pytest.raises(Truncated) as err:
        parse_flo(header(4, 4))
    assert err.value.expected == 12 + 8 * 16
    assert err.value.actual == 12
    assert "140" in str(err.value)


def test_short_header_is_truncated():
    with pytest.raises(Truncated):
        parse_flo(MAGIC + b"\x01\x00")
    with pytest.raises(Truncated):
        parse_flo(b"PI")


@pytest.mark.parametrize("width,height", [(0, 3), (3, 0), (-1, 2)])
def test_bad_dims(width, height):
    with pytest.raises(BadDims):
        parse_flo(header(width, height) + bytes(8))


def test_dims_over_cap():
    with pytest.raises(BadDims):
        parse_flo(header(100, 100) + bytes(8 * 100 * 100), max_pixels=9_999)


def test_non_finite_payload():
    payload = np.array([1.0, np.nan], dtype="<f4").tobytes()
    with pytest.raises(NonFinite):
        parse_flo(header(1, 1) + payload)


def test_trailing_bytes_rejected():
    with pytest.raises(TrailingData):
        parse_flo(write_flo(FlowMap(u=[[1.0]], v=[[1.0]])) + b"\x00")


def test_format_errors_share_a_base():
    for cls in (BadMagic, Truncated, BadDims, NonFinite, TrailingData):
        assert issubclass(cls, FloFormatError)


def test_file_round_trip(tmp_path):
    flow = FlowMap(u=[[0.5, 1.5]], v=[[0.0, -0.25]])
    path = tmp_path / "a.flo"
    save_flo(path, flow)
    assert read_flo(path) == flow


def test_flow_map_is_read_only():
    flow = FlowMap(u=[[1.0]], v=[[1.0]])
    with pytest.raises(ValueError):
        flow.u[0, 0] = 3.0


def test_median_of_constant_map():
    flow = FlowMap(u=np.full((10, 10), 3.0), v=np.zeros((10, 10)))
    assert median_flow(flow, BBox(2.3, 1.7, 4.2, 5.0)) == 3.0


def test_median_even_count_averages_middle_values():
    flow = FlowMap(u=[[1.0, 2.0], [3.0, 4.0]], v=np.zeros((2, 2)))
    assert median_flow(flow, BBox(0.0, 0.0, 2.0, 2.0)) == 2.5


def test_box_left_of_image_is_empty():
    flow = FlowMap(u=np.ones((4, 4)), v=np.zeros((4, 4)))
    with pytest.raises(EmptyRegion):
        median_flow(flow, BBox(-5.0, 0.0, 5.0, 2.0))


def test_pixel_membership_is_half_open():
    # x in [1, 3) covers columns 1 and 2 only
    assert pixel_bounds(BBox(1.0, 0.0, 2.0, 1.0), 10, 10) == (1, 3, 0, 1)
    # edges within rounding noise of an integer snap onto it
    assert pixel_bounds(BBox(1.0 + 1e-12, 0.0, 2.0, 1.0), 10, 10) == (1, 3, 0, 1)
    assert pixel_bounds(BBox(0.5, 0.5, 2.0, 2.0), 10, 10) == (1, 3, 1, 3)
    assert pixel_bounds(BBox(-3.0, -3.0, 20.0, 20.0), 10, 8) == (0, 10, 0, 8)


def sorted_median(flow, box):
    values = []
    for iy in range(flow.height):
        for ix in range(flow.width):
            if box.x_ul <= ix < box.x2 and box.y_ul <= iy < box.y2:
                values.append(float(flow.u[iy, ix]))
    if not values:
        return None
    values.sort()
    mid = len(values) // 2
    return values[mid] if len(values) % 2 else (values[mid - 1] + values[mid]) / 2


def test_median_matches_full_sort(rng):
    checked = 0
    for _ in range(1000):
        h, w = rng.integers(1, 13, size=2)
        flow = FlowMap(u=rng.normal(0, 3, (h, w)), v=np.zeros((h, w)))
        # quarter-pixel coordinates are exact in binary
        x, y = rng.integers(-8, 4 * w, size=2) / 4
        bw, bh = rng.integers(1, 4 * w + 8, size=2) / 4
        box = BBox(float(x), float(y), float(bw), float(bh))
        expected = sorted_median(flow, box)
        if expected is None:
            with pytest.raises(EmptyRegion):
                median_flow(flow, box)
            continue
        assert median_flow(flow, box) == expected
        checked += 1
    assert checked > 500


def test_median_moves_with_the_map(rng):
    for _ in range(100):
        h, w = rng.integers(2, 12, size=2)
        dx, dy = rng.integers(0, 6, size=2)
        u = rng.normal(0, 3, (h, w))
        shifted = np.zeros((h + dy, w + dx))
        shifted[dy:, dx:] = u
        box = BBox(float(rng.integers(0, w) / 2), float(rng.integers(0, h) / 2), float(w / 2 + 0.5), float(h / 2 + 0.5))
        base = median_flow(FlowMap(u=u, v=np.zeros_like(u)), box)
        moved = median_flow(FlowMap(u=shifted, v=np.zeros_like(shifted)), box.translated(float(dx), float(dy)))
        assert moved == base


def test_median_within_box_range(rng):
    flow = FlowMap(u=rng.normal(0, 1, (20, 30)), v=np.zeros((20, 30)))
    box = BBox(3.5, 2.25, 11.0, 9.5)
    x0, x1, y0, y1 = pixel_bounds(box, 30, 20)
    inside = flow.u[y0:y1, x0:x1]
    assert inside.min() <= median_flow(flow, box) <= inside.max()


def test_summary():
    flow = FlowMap(u=[[1.0, 2.0, 6.0]], v=[[0.0, -1.0, 1.0]])
    summary = flow_summary(flow)
    assert summary["width"] == 3
    assert summary["height"] == 1
    assert summary["u_min"] == 1.0
    assert summary["u_max"] == 6.0
    assert summary["u_median"] == 2.0
    assert math.isclose(summary["v_min"], -1.0)
