"""Grid geometry for click-point image passwords.

An image is divided into a 3x3 grid of equal tolerance squares.  During
registration the grid is shown with each cell carrying a digit from 1 to 9;
the digit assigned to a cell depends on a labeling order chosen by the user.
During login the grid is invisible and the user must click the cell whose
digit (under their chosen order) equals the corresponding digit of a
freshly issued one-time key.

This module provides the four labeling orders, the cell/label bijections,
the pixel-to-cell mapping used by the click handler, and the exact size of
the resulting password space.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

GRID_SIZE = 3


class LabelOrder(Enum):
    """The four ways digits 1..9 can be laid out on the 3x3 grid."""

    LEFT_TO_RIGHT = "left-to-right"
    RIGHT_TO_LEFT = "right-to-left"
    TOP_TO_BOTTOM = "top-to-bottom"
    BOTTOM_TO_TOP = "bottom-to-top"


@dataclass(frozen=True, order=True)
class Cell:
    """A grid cell addressed by row and column.

    Row 0 is the top of the image, column 0 is the left edge.
    """

    row: int
    col: int

    def __post_init__(self) -> None:
        if not (0 <= self.row < GRID_SIZE and 0 <= self.col < GRID_SIZE):
            raise ValueError(f"cell out of range: ({self.row}, {self.col})")

    def __iter__(self):
        yield self.row
        yield self.col


def label_of(order: LabelOrder, cell: Cell) -> int:
    """Return the digit shown in ``cell`` under ``order``.

    >>> label_of(LabelOrder.LEFT_TO_RIGHT, Cell(0, 0))
    1
    >>> label_of(LabelOrder.BOTTOM_TO_TOP, Cell(2, 0))
    1
    """
    r, c = cell.row, cell.col
    if order is LabelOrder.LEFT_TO_RIGHT:
        return GRID_SIZE * r + c + 1
    if order is LabelOrder.RIGHT_TO_LEFT:
        return GRID_SIZE * r + (GRID_SIZE - 1 - c) + 1
    if order is LabelOrder.TOP_TO_BOTTOM:
        return GRID_SIZE * c + r + 1
    if order is LabelOrder.BOTTOM_TO_TOP:
        return GRID_SIZE * c + (GRID_SIZE - 1 - r) + 1
    raise ValueError(f"unknown label order: {order!r}")


def cell_of(order: LabelOrder, label: int) -> Cell:
    """Return the cell that carries ``label`` under ``order``.

    Inverse of :func:`label_of` for every order.
    """
    if not isinstance(label, int) or isinstance(label, bool):
        raise ValueError(f"label must be an int, got {label!r}")
    if not 1 <= label <= GRID_SIZE * GRID_SIZE:
        raise ValueError(f"label out of range: {label}")
    q, rem = divmod(label - 1, GRID_SIZE)
    if order is LabelOrder.LEFT_TO_RIGHT:
        return Cell(q, rem)
    if order is LabelOrder.RIGHT_TO_LEFT:
        return Cell(q, GRID_SIZE - 1 - rem)
    if order is LabelOrder.TOP_TO_BOTTOM:
        return Cell(rem, q)
    if order is LabelOrder.BOTTOM_TO_TOP:
        return Cell(GRID_SIZE - 1 - rem, q)
    raise ValueError(f"unknown label order: {order!r}")


def expected_cell(order: LabelOrder, digit: int) -> Cell:
    """Return the cell a user must click for one key digit.

    The correct click target for a digit is simply the cell labeled with
    that digit under the user's chosen order.
    """
    return cell_of(order, digit)


def map_click(x: float, y: float, width: int, height: int) -> Cell:
    """Map a click at pixel ``(x, y)`` on a ``width`` x ``height`` image to a cell.

    Coordinates follow screen convention: x grows rightward, y grows
    downward, origin at the top-left corner.  Clicks exactly on the far
    edge (``x == width`` or ``y == height``) fall into the last cell.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive: {width}x{height}")
    if not (0 <= x <= width) or not (0 <= y <= height):
        raise ValueError(f"click ({x}, {y}) outside {width}x{height} image")
    col = min(int(GRID_SIZE * x) // width, GRID_SIZE - 1)
    row = min(int(GRID_SIZE * y) // height, GRID_SIZE - 1)
    return Cell(row, col)


@dataclass(frozen=True)
class SpaceParams:
    """Parameters that determine the size of the password space.

    ``width``/``height`` are image dimensions in pixels, ``tolerance`` is
    the side of one tolerance square, ``orders`` counts the available
    labeling orders, ``images`` is how many images each password uses and
    ``rounds`` how many image passwords a full credential chains.
    """

    width: int = 450
    height: int = 450
    tolerance: int = 150
    orders: int = 4
    images: int = 4
    rounds: int = 3

    def __post_init__(self) -> None:
        for name in ("width", "height", "tolerance", "orders", "images", "rounds"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"{name} must be a positive int, got {value!r}")
        if self.tolerance > self.width or self.tolerance > self.height:
            raise ValueError("tolerance square cannot exceed the image")


def password_space(params: SpaceParams = SpaceParams()) -> int:
    """Return the exact number of distinct full credentials.

    One image contributes ``floor(w*h / t^2)`` distinguishable click
    regions; each of the ``m`` labeling orders makes the same click mean a
    different digit, so a single image choice carries ``regions * m``
    possibilities.  A password chains ``n`` images and a credential chains
    ``c`` passwords, multiplying independently.

    >>> password_space(SpaceParams())
    4738381338321616896
    """
    regions = (params.width * params.height) // (params.tolerance * params.tolerance)
    per_image = regions * params.orders
    return (per_image ** params.images) ** params.rounds
