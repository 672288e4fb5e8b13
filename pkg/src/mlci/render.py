"""ASCII and SVG heatmaps of accrual probabilities, one panel per constraint kind."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .mdp import ConstraintKind, MinimalConstraint

SHADES = " .:-=+*#%@"
# compass position of the grid actions; anything else is listed after the compass
COMPASS = {"up_left": (0, 0), "up": (1, 0), "up_right": (2, 0),
           "left": (0, 1), "stay": (1, 1), "right": (2, 1),
           "down_left": (0, 2), "down": (1, 2), "down_right": (2, 2)}


def _shade(v: float) -> str:
    v = min(max(v, 0.0), 1.0)
    return SHADES[min(int(v * len(SHADES)), len(SHADES) - 1)]


def _split(final: np.ndarray, layout: dict):
    k, S, A = layout["n_native"], layout["n_states"], layout["n_actions"]
    return final[:k], final[k:k + S], final[k + S:k + S + A]


def _grid_shape(n_states: int, grid_shape) -> tuple[int, int]:
    if grid_shape:
        return tuple(grid_shape)
    w = math.ceil(math.sqrt(n_states))
    return w, math.ceil(n_states / w)


def _marks(marked: Sequence[MinimalConstraint], kind: ConstraintKind) -> set[int]:
    return {c.index for c in marked if c.kind == kind}


def render_ascii(final: np.ndarray, layout: dict, marked: Sequence[MinimalConstraint] = (),
                 grid_shape=None, action_names=None, feature_names=None) -> str:
    """Text heatmap: states as a grid (top row first), then actions, then features.

    Each cell is two characters: a shade from ``SHADES`` and ``X`` if constrained.
    """
    feats, states, acts = _split(np.asarray(final, dtype=float), layout)
    W, H = _grid_shape(len(states), grid_shape)
    lines = ["states"]
    ms = _marks(marked, ConstraintKind.STATE)
    for y in range(H - 1, -1, -1):
        row = ""
        for x in range(W):
            s = y * W + x
            row += "  " if s >= len(states) else _shade(states[s]) + ("X" if s in ms else " ")
        lines.append("|" + row + "|")
    lines.append("actions")
    ma = _marks(marked, ConstraintKind.ACTION)
    names = action_names or [f"a{i}" for i in range(len(acts))]
    for i, v in enumerate(acts):
        lines.append(f"  {names[i]:<12} {_shade(v)}{'X' if i in ma else ' '} {v:.3f}")
    lines.append("features")
    mf = _marks(marked, ConstraintKind.FEATURE)
    fnames = feature_names or [f"f{i}" for i in range(len(feats))]
    for i, v in enumerate(feats):
        lines.append(f"  {fnames[i]:<12} {_shade(v)}{'X' if i in mf else ' '} {v:.3f}")
    return "\n".join(lines) + "\n"


def _cell(x, y, size, v, mark, label=None):
    g = int(round(255 * (1.0 - min(max(v, 0.0), 1.0))))
    out = [f'<rect x="{x:.1f}" y="{y:.1f}" width="{size}" height="{size}" '
           f'fill="rgb({g},{g},255)" stroke="#444" stroke-width="0.5"/>']
    if mark:
        out.append(f'<text x="{x + size / 2:.1f}" y="{y + size * 0.72:.1f}" font-size="{size * 0.7:.1f}" '
                   f'text-anchor="middle" fill="red" font-family="sans-serif">X</text>')
    if label:
        out.append(f'<text x="{x + size + 4:.1f}" y="{y + size * 0.7:.1f}" font-size="10" '
                   f'font-family="sans-serif">{label}</text>')
    return out


def render_svg(final: np.ndarray, layout: dict, marked: Sequence[MinimalConstraint] = (),
               grid_shape=None, action_names=None, feature_names=None, cell: int = 24) -> str:
    """SVG with the state grid on the left, the action compass top right and features below it.

    Output depends only on the inputs (fixed number formatting, no timestamps).
    """
    feats, states, acts = _split(np.asarray(final, dtype=float), layout)
    W, H = _grid_shape(len(states), grid_shape)
    ms, ma, mf = (_marks(marked, k) for k in
                  (ConstraintKind.STATE, ConstraintKind.ACTION, ConstraintKind.FEATURE))
    parts = []
    pad = 10
    for s, v in enumerate(states):
        x, y = s % W, s // W
        parts += _cell(pad + x * cell, pad + (H - 1 - y) * cell, cell, v, s in ms)
    ox = pad * 3 + W * cell
    names = action_names or [f"a{i}" for i in range(len(acts))]
    extra = 0
    for i, v in enumerate(acts):
        if names[i] in COMPASS:
            cx, cy = COMPASS[names[i]]
            parts += _cell(ox + cx * cell, pad + cy * cell, cell, v, i in ma)
        else:
            parts += _cell(ox + (3 + extra) * cell + 4, pad, cell, v, i in ma, names[i])
            extra += 1
    fy = pad * 3 + 3 * cell
    fnames = feature_names or [f"f{i}" for i in range(len(feats))]
    for i, v in enumerate(feats):
        parts += _cell(ox, fy + i * (cell + 4), cell, v, i in mf, f"{fnames[i]} {v:.3f}")
    width = ox + 8 * cell + pad
    height = max(pad * 2 + H * cell, fy + len(feats) * (cell + 4) + pad)
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *parts, "</svg>"]) + "\n"
