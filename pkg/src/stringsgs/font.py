"""Fixed 5x7 dot-matrix font shared by the scene generator and the builtin recognizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GLYPH_W, GLYPH_H = 5, 7

_RAW = {
    "A": ".###. #...# #...# ##### #...# #...# #...#",
    "B": "####. #...# #...# ####. #...# #...# ####.",
    "C": ".###. #...# #.... #.... #.... #...# .###.",
    "D": "###.. #..#. #...# #...# #...# #..#. ###..",
    "E": "##### #.... #.... ####. #.... #.... #####",
    "F": "##### #.... #.... ####. #.... #.... #....",
    "G": ".###. #...# #.... #.### #...# #...# .####",
    "H": "#...# #...# #...# ##### #...# #...# #...#",
    "I": ".###. ..#.. ..#.. ..#.. ..#.. ..#.. .###.",
    "J": "..### ...#. ...#. ...#. ...#. #..#. .##..",
    "K": "#...# #..#. #.#.. ##... #.#.. #..#. #...#",
    "L": "#.... #.... #.... #.... #.... #.... #####",
    "M": "#...# ##.## #.#.# #.#.# #...# #...# #...#",
    "N": "#...# #...# ##..# #.#.# #..## #...# #...#",
    "O": ".###. #...# #...# #...# #...# #...# .###.",
    "P": "####. #...# #...# ####. #.... #.... #....",
    "Q": ".###. #...# #...# #...# #.#.# #..#. .##.#",
    "R": "####. #...# #...# ####. #.#.. #..#. #...#",
    "S": ".#### #.... #.... .###. ....# ....# ####.",
    "T": "##### ..#.. ..#.. ..#.. ..#.. ..#.. ..#..",
    "U": "#...# #...# #...# #...# #...# #...# .###.",
    "V": "#...# #...# #...# #...# #...# .#.#. ..#..",
    "W": "#...# #...# #...# #.#.# #.#.# #.#.# .#.#.",
    "X": "#...# #...# .#.#. ..#.. .#.#. #...# #...#",
    "Y": "#...# #...# .#.#. ..#.. ..#.. ..#.. ..#..",
    "Z": "##### ....# ...#. ..#.. .#... #.... #####",
    "0": ".###. #...# #..## #.#.# ##..# #...# .###.",
    "1": "..#.. .##.. ..#.. ..#.. ..#.. ..#.. .###.",
    "2": ".###. #...# ....# ...#. ..#.. .#... #####",
    "3": "##### ...#. ..#.. ...#. ....# #...# .###.",
    "4": "...#. ..##. .#.#. #..#. ##### ...#. ...#.",
    "5": "##### #.... ####. ....# ....# #...# .###.",
    "6": "..##. .#... #.... ####. #...# #...# .###.",
    "7": "##### ....# ...#. ..#.. .#... .#... .#...",
    "8": ".###. #...# #...# .###. #...# #...# .###.",
    "9": ".###. #...# #...# .#### ....# ...#. .##..",
    " ": "..... ..... ..... ..... ..... ..... .....",
}

ATLAS: dict[str, np.ndarray] = {
    ch: np.array([[c == "#" for c in row] for row in spec.split()], dtype=bool) for ch, spec in _RAW.items()
}
ALPHABET = "".join(ch for ch in ATLAS if ch != " ")


class UnsupportedCharacterError(ValueError):
    pass


@dataclass(frozen=True)
class GlyphCell:
    char: str
    x0: int
    y0: int
    x1: int
    y1: int


def glyph_metrics(glyph_px: int) -> tuple[int, int, int]:
    """(cell width, cell height, inter-glyph spacing) in pixels for a glyph height."""
    if glyph_px < 1:
        raise ValueError("glyph_px must be positive")
    return max(1, round(glyph_px * GLYPH_W / GLYPH_H)), glyph_px, max(1, round(glyph_px / GLYPH_H))


def _scaled(bitmap: np.ndarray, w: int, h: int) -> np.ndarray:
    # nearest-neighbour resample of the dot matrix into a w x h cell
    rows = np.minimum((np.arange(h) + 0.5) * GLYPH_H / h, GLYPH_H - 1e-9).astype(int)
    cols = np.minimum((np.arange(w) + 0.5) * GLYPH_W / w, GLYPH_W - 1e-9).astype(int)
    return bitmap[np.ix_(rows, cols)]


def rasterize_glyphs(text: str, glyph_px: int = 7) -> tuple[np.ndarray, list[GlyphCell]]:
    """Render one line of text as a boolean ink texture plus per-character cell records."""
    text = text.upper()
    bad = [c for c in text if c not in ATLAS]
    if bad:
        raise UnsupportedCharacterError(f"characters not in atlas: {''.join(sorted(set(bad)))!r}")
    cw, ch, sp = glyph_metrics(glyph_px)
    if not text:
        return np.zeros((0, 0), bool), []
    width = len(text) * cw + (len(text) - 1) * sp
    tex = np.zeros((ch, width), bool)
    cells = []
    for k, c in enumerate(text):
        x0 = k * (cw + sp)
        tex[:, x0 : x0 + cw] = _scaled(ATLAS[c], cw, ch)
        cells.append(GlyphCell(c, x0, 0, x0 + cw, ch))
    return tex, cells


def rasterize_lines(lines: list[str], glyph_px: int, line_gap: int | None = None, margin: int = 0):
    """Stack several lines (left aligned) into one texture; returns (texture, cells, line boxes)."""
    _, ch, sp = glyph_metrics(glyph_px)
    gap = 2 * sp if line_gap is None else line_gap
    rendered = [rasterize_glyphs(t, glyph_px) for t in lines]
    width = max((r[0].shape[1] for r in rendered), default=0) + 2 * margin
    height = len(lines) * ch + max(len(lines) - 1, 0) * gap + 2 * margin
    tex = np.zeros((height, width), bool)
    cells, boxes = [], []
    for i, (t, cs) in enumerate(rendered):
        y = margin + i * (ch + gap)
        if t.size:
            tex[y : y + ch, margin : margin + t.shape[1]] = t
        cells += [GlyphCell(c.char, c.x0 + margin, c.y0 + y, c.x1 + margin, c.y1 + y) for c in cs]
        boxes.append((margin, y, margin + t.shape[1], y + ch))
    return tex, cells, boxes
