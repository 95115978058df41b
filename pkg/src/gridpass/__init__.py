"""Multifactor authentication from clicked grid cells and one-time keys."""

from gridpass.grid import (
    Cell,
    LabelOrder,
    SpaceParams,
    cell_of,
    expected_cell,
    label_of,
    map_click,
    password_space,
)

__all__ = [
    "Cell",
    "LabelOrder",
    "SpaceParams",
    "cell_of",
    "expected_cell",
    "label_of",
    "map_click",
    "password_space",
]
