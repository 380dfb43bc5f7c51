"""Order-k Hilbert curve between 2-D grid cells and 1-D indices.

The curve linearizes the landscape before anything is encrypted: nearby cells
get nearby indices, so a 1-D index distance is a usable proximity signal.

Orientation convention (the curve itself fixes none): with the y axis read
downward, the first-order curve traces a "U" opening upward, starting at
d = 0 in cell (0, 0) and ending at (1, 0). All indices in fixtures and tests
assume this convention. The implementation is the classic iterative
bit-twiddling form; a recursive construction lives in the test tree as an
independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError


@dataclass(frozen=True)
class GridCell:
    x: int
    y: int


@dataclass(frozen=True)
class HilbertIndex:
    """Position d along the order-k curve over a 2^k x 2^k grid."""

    order: int
    d: int


@dataclass(frozen=True)
class GeoBox:
    """Geographic bounding box in decimal degrees."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float


def _check_order(order: int) -> int:
    if order < 1:
        raise DomainError("curve order must be >= 1")
    return 1 << order  # side length


def xy_to_index(cell: GridCell, order: int) -> HilbertIndex:
    """Map a grid cell to its distance along the order-k curve."""
    side = _check_order(order)
    x, y = cell.x, cell.y
    if not (0 <= x < side and 0 <= y < side):
        raise DomainError(f"cell {cell} outside the {side}x{side} grid")
    d = 0
    s = side // 2
    while s > 0:
        rx = 1 if x & s else 0
        ry = 1 if y & s else 0
        d += s * s * ((3 * rx) ^ ry)
        x, y = _rotate(s, x, y, rx, ry)
        s //= 2
    return HilbertIndex(order=order, d=d)


def index_to_xy(idx: HilbertIndex) -> GridCell:
    """Inverse of xy_to_index."""
    side = _check_order(idx.order)
    if not 0 <= idx.d < side * side:
        raise DomainError(f"index {idx.d} outside [0, {side * side})")
    t = idx.d
    x = y = 0
    s = 1
    while s < side:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        x, y = _rotate(s, x, y, rx, ry)
        x += s * rx
        y += s * ry
        t //= 4
        s *= 2
    return GridCell(x=x, y=y)


def _rotate(s: int, x: int, y: int, rx: int, ry: int) -> tuple[int, int]:
    if ry == 0:
        if rx == 1:
            x = s - 1 - x
            y = s - 1 - y
        x, y = y, x
    return x, y


def latlon_to_cell(lat: float, lon: float, box: GeoBox, order: int) -> GridCell:
    """Quantize a coordinate uniformly into the 2^k x 2^k grid.

    The upper boundary maps to the last cell; points outside the box are
    rejected.
    """
    side = _check_order(order)
    if not (box.lat_min < box.lat_max and box.lon_min < box.lon_max):
        raise DomainError("degenerate bounding box")
    if not (box.lat_min <= lat <= box.lat_max and box.lon_min <= lon <= box.lon_max):
        raise DomainError(f"({lat}, {lon}) outside the bounding box")
    x = int((lon - box.lon_min) / (box.lon_max - box.lon_min) * side)
    y = int((lat - box.lat_min) / (box.lat_max - box.lat_min) * side)
    return GridCell(x=min(x, side - 1), y=min(y, side - 1))
