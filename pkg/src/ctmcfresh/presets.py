"""Bundled example chains.

States are numbered from 0.  ``fig6b`` has one row whose printed diagonal
does not balance its off-diagonal rates, so its diagonal is recomputed.
"""
from __future__ import annotations

from .ctmc import Chain, build_chain, chain_from_rates

_GENERATORS = {
    "fig4": [
        [-1.70, 0.41, 0.53, 0.76],
        [1.03, -2.17, 0.83, 0.31],
        [1.11, 0.78, -2.74, 0.85],
        [1.15, 1.13, 0.71, -2.99],
    ],
    "fig5": [
        [-3.99, 0.77, 0.69, 1.29, 1.24],
        [0.70, -0.70, 0, 0, 0],
        [0.84, 0, -0.84, 0, 0],
        [0.71, 0, 0, -0.71, 0],
        [0.48, 0, 0, 0, -0.48],
    ],
    "fig6a": [
        [-0.79, 0.79, 0, 0],
        [1.71, -1.97, 0.26, 0],
        [0, 1.08, -2.73, 1.65],
        [0, 0, 0.62, -0.62],
    ],
    "fig6b": [
        [-0.62, 0.62, 0, 0, 0, 0],
        [0.63, -1.58, 0.95, 0, 0, 0],
        [0, 1.748, -3.55, 1.81, 0, 0],
        [0, 0, 0.47, -2.22, 1.75, 0],
        [0, 0, 0, 1.15, -1.88, 0.73],
        [0, 0, 0, 0, 1.91, -1.91],
    ],
    "fig6c": [
        [-2.41, 1.25, 0.50, 0.66],
        [0.36, -0.36, 0, 0],
        [1.20, 0, -1.20, 0],
        [1.18, 0, 0, -1.18],
    ],
    "fig6d": [
        [-4.83, 1.24, 0.83, 1.25, 0.88, 0.63],
        [1.08, -1.08, 0, 0, 0, 0],
        [0.31, 0, -0.31, 0, 0, 0],
        [0.99, 0, 0, -0.99, 0, 0],
        [1.01, 0, 0, 0, -1.01, 0],
        [1.17, 0, 0, 0, 0, -1.17],
    ],
    "fig9": [
        [-1.02, 1.02, 0, 0],
        [1.05, -2.21, 1.16, 0],
        [0, 0.61, -2.18, 1.57],
        [0, 0, 0.26, -0.26],
    ],
    # 4-state ring, rates alternating 1 and 0.75; oscillating MAP estimate
    "ring4": [
        [-1.0, 1.0, 0, 0],
        [0, -0.75, 0.75, 0],
        [0, 0, -1.0, 1.0],
        [0.75, 0, 0, -0.75],
    ],
    "binary": [
        [-1.0, 1.0],
        [1.0, -1.0],
    ],
}

_RECOMPUTE_DIAGONAL = {"fig6b"}

#: The seven single-source experiment chains.
TABLE_PRESETS = ("fig4", "fig5", "fig6a", "fig6b", "fig6c", "fig6d", "fig9")

PRESETS = tuple(_GENERATORS)


def generator(name: str):
    """Generator rows as printed (before any diagonal fix)."""
    try:
        return [list(r) for r in _GENERATORS[name]]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def preset(name: str) -> Chain:
    rows = generator(name)
    if name in _RECOMPUTE_DIAGONAL:
        return chain_from_rates(rows, label=name)
    return build_chain(rows, label=name)
