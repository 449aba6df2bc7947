"""Readability scoring: recall-oriented character error rate and text recognizers."""

from __future__ import annotations

import csv
import json
import math
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .font import ATLAS, GLYPH_H, GLYPH_W

IMAGE_PLACEHOLDER = "{image}"
REJECT_DISTANCE = 0.35


@dataclass(frozen=True)
class TextItem:
    string: str
    bbox: Optional[tuple[int, int, int, int]] = None


class RecognizerError(RuntimeError):
    pass


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over code points."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalize(s: str) -> str:
    return " ".join(s.casefold().split())


def _strings(items) -> list[str]:
    out = []
    for it in items:
        s = normalize(it.string if isinstance(it, TextItem) else str(it))
        if s:
            out.append(s)
    return out


@dataclass(frozen=True)
class ViewScore:
    view: str
    gt_chars: int
    edit_cost: int
    cer: Optional[float]  # None when the view has no ground-truth text


def score_view(gt, rec, view: str = "") -> ViewScore:
    """Greedy recall-oriented matching of ground-truth items to recognized items.

    Exact matches are paired first, which is always optimal and keeps the
    score monotone when a recognized item is corrected. The remaining
    ground-truth items are visited longest first (ties lexicographic); each
    takes the unused recognized item with the smallest edit distance, or
    stays unmatched at full cost when nothing beats deleting it. Surplus
    recognized text is free.
    """
    g = sorted(_strings(gt), key=lambda s: (-len(s), s))
    r = _strings(rec)
    total = sum(len(s) for s in g)
    if total == 0:
        return ViewScore(view, 0, 0, None)
    used = [False] * len(r)
    rest = []
    for s in g:
        j = next((j for j, cand in enumerate(r) if not used[j] and cand == s), -1)
        if j >= 0:
            used[j] = True
        else:
            rest.append(s)
    cost = 0
    for s in rest:
        best, best_j = len(s), -1
        for j, cand in enumerate(r):
            if used[j]:
                continue
            d = levenshtein(s, cand)
            if d < best:
                best, best_j = d, j
        if best_j >= 0:
            used[best_j] = True
        cost += best
    return ViewScore(view, total, cost, min(1.0, cost / total))


@dataclass
class CerReport:
    per_view: list[ViewScore] = field(default_factory=list)
    scene_cer: Optional[float] = None
    n_views: int = 0

    def summary(self) -> str:
        lines = [f"{'view':<24} {'gt_chars':>8} {'cost':>6} {'cer':>7}"]
        for v in self.per_view:
            cer = "-" if v.cer is None else f"{v.cer:.4f}"
            lines.append(f"{v.view:<24} {v.gt_chars:>8} {v.edit_cost:>6} {cer:>7}")
        agg = "n/a" if self.scene_cer is None else f"{self.scene_cer:.4f}"
        lines.append(f"scene CER over {self.n_views} view(s): {agg}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["view", "gt_chars", "edit_cost", "cer"])
            for v in self.per_view:
                w.writerow([v.view, v.gt_chars, v.edit_cost, "" if v.cer is None else repr(v.cer)])
            w.writerow(["__scene__", "", "", "" if self.scene_cer is None else repr(self.scene_cer)])


def aggregate(per_view: Sequence[ViewScore]) -> CerReport:
    """Unweighted mean over views that carry ground-truth text."""
    counted = [v.cer for v in per_view if v.cer is not None]
    scene = float(np.mean(counted)) if counted else None
    return CerReport(list(per_view), scene, len(counted))


def read_gt_sidecar(path) -> list[TextItem]:
    words = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0]
        words += [TextItem(w) for w in line.split()]
    return words


# ---------------------------------------------------------------- builtin recognizer


def _template(ch: str) -> np.ndarray:
    bm = ATLAS[ch]
    cols = np.flatnonzero(bm.any(axis=0))
    return bm[:, cols[0] : cols[-1] + 1]


_TEMPLATES = {ch: _template(ch) for ch in ATLAS if ch != " "}


def _resample(ink: np.ndarray, w: int, h: int) -> np.ndarray:
    im = Image.fromarray(ink.astype(np.float32), mode="F")
    return np.asarray(im.resize((w, h), Image.BOX), dtype=np.float64)


def _classify(ink: np.ndarray, dot: float) -> Optional[str]:
    h, w = ink.shape
    w_dots = w / dot
    best, best_ch = math.inf, None
    for ch, tpl in _TEMPLATES.items():
        th, tw = tpl.shape
        cover = _resample(ink, tw, th)
        # binary Hamming distance gates the match; soft coverage ranks it
        if np.count_nonzero((cover >= 0.5) != tpl) / tpl.size > REJECT_DISTANCE:
            continue
        score = np.abs(cover - tpl).mean() + 0.05 * abs(w_dots - tw)
        if score < best:
            best, best_ch = score, ch
    return best_ch


def _lines(boxes: list[tuple[int, int, int, int]]) -> list[list[int]]:
    """Group component boxes (y0, y1, x0, x1) into text lines by vertical overlap."""
    order = sorted(range(len(boxes)), key=lambda i: ((boxes[i][0] + boxes[i][1]) / 2, boxes[i][2]))
    lines: list[list[int]] = []
    spans: list[list[float]] = []
    for i in order:
        y0, y1 = boxes[i][0], boxes[i][1]
        for k, (a, b) in enumerate(spans):
            if min(b, y1) - max(a, y0) > 0.5 * min(b - a, y1 - y0):
                lines[k].append(i)
                spans[k] = [min(a, y0), max(b, y1)]
                break
        else:
            lines.append([i])
            spans.append([y0, y1])
    return lines


def _deskew(lab: np.ndarray, members: list[int]) -> np.ndarray:
    """Ink of one line with its baseline slope sheared away (integer column shifts)."""
    ys, xs = np.nonzero(np.isin(lab, members))
    labels = lab[ys, xs]
    slope = 0.0
    if len(members) >= 2:
        cx = np.array([xs[labels == m].mean() for m in members])
        cy = np.array([ys[labels == m].max() for m in members], dtype=np.float64)
        if np.ptp(cx) > 0:
            slope = float(np.polyfit(cx, cy, 1)[0])
    x0 = xs.min()
    ys2 = ys - np.round(slope * (xs - x0)).astype(np.int64)
    ys2 -= ys2.min()
    out = np.zeros((ys2.max() + 1, xs.max() - x0 + 1), bool)
    out[ys2, xs - x0] = True
    return out


def _read_line(line: np.ndarray) -> list[TextItem]:
    cols = line.any(axis=0)
    runs, x = [], 0
    while x < len(cols):
        if cols[x]:
            x1 = x
            while x1 < len(cols) and cols[x1]:
                x1 += 1
            rows = np.flatnonzero(line[:, x:x1].any(axis=1))
            runs.append([rows[0], rows[-1] + 1, x, x1])
            x = x1
        else:
            x += 1
    if not runs:
        return []
    height = float(np.median([r[1] - r[0] for r in runs]))
    if height < 3:
        return []
    dot = height / GLYPH_H
    gw = dot * GLYPH_W
    cells = []
    for y0, y1, x0, x1 in runs:
        k = max(1, int(round((x1 - x0 + dot) / (gw + dot))))
        edges = np.linspace(x0, x1, k + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            a, b = int(round(a)), int(round(b))
            sub = line[:, a:b]
            cc = np.flatnonzero(sub.any(axis=0))
            rr = np.flatnonzero(sub.any(axis=1))
            if len(cc) == 0:
                continue
            cells.append((a + cc[0], a + cc[-1] + 1, rr[0], rr[-1] + 1))
    cells.sort()
    items, word, box, prev_x1 = [], "", None, None
    for cx0, cx1, cy0, cy1 in cells:
        if prev_x1 is not None and cx0 - prev_x1 >= gw and word:
            items.append(TextItem(word, box))
            word, box = "", None
        ch = _classify(line[cy0:cy1, cx0:cx1], dot)
        word += ch if ch is not None else ""
        box = (cx0, cy0, cx1, cy1) if box is None else (min(box[0], cx0), min(box[1], cy0), max(box[2], cx1), max(box[3], cy1))
        prev_x1 = cx1
    if word:
        items.append(TextItem(word, box))
    return items


def recognize_builtin(image: np.ndarray, min_area: int = 3) -> list[TextItem]:
    """Template-matching OCR for the builtin dot-matrix font (light ink on dark ground).

    Boxes of the returned items are in the deskewed frame of their line.
    """
    img = np.asarray(image, dtype=np.float64)
    luma = img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114 if img.ndim == 3 else img
    ink = luma > 0.5
    lab, n = ndimage.label(ink, structure=np.ones((3, 3)))
    if n == 0:
        return []
    boxes, keep = [], []
    for k, sl in enumerate(ndimage.find_objects(lab)):
        if np.count_nonzero(lab[sl] == k + 1) < min_area:
            continue
        boxes.append((sl[0].start, sl[0].stop, sl[1].start, sl[1].stop))
        keep.append(k + 1)
    items = []
    for line in _lines(boxes):
        items += _read_line(_deskew(lab, [keep[i] for i in line]))
    return items


# ---------------------------------------------------------------- external recognizer


def recognize_external(image_path, command: str, timeout: float = 120.0) -> list[TextItem]:
    """Run an external OCR command and parse its standard output.

    ``{image}`` in the template is replaced by the image path. Output is
    either a JSON array of ``{"text": ..., "bbox": [...]}`` objects or
    plain UTF-8 text, one or more words per line.
    """
    argv = [a.replace(IMAGE_PLACEHOLDER, str(image_path)) for a in shlex.split(command)]
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout)
    except (OSError, subprocess.SubprocessError) as e:
        raise RecognizerError(f"could not run {argv[0]!r}: {e}") from e
    if proc.returncode != 0:
        err = proc.stderr.decode("utf-8", "replace").strip()
        raise RecognizerError(f"{argv[0]!r} exited with status {proc.returncode}: {err}")
    try:
        out = proc.stdout.decode("utf-8")
    except UnicodeDecodeError as e:
        raise RecognizerError(f"{argv[0]!r} produced non-UTF-8 output") from e
    text = out.strip()
    if text.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise RecognizerError(f"{argv[0]!r} produced malformed JSON: {e}") from e
        items = []
        for d in data:
            s = str(d.get("text", "")).strip() if isinstance(d, dict) else str(d).strip()
            if s:
                bb = d.get("bbox") if isinstance(d, dict) else None
                items.append(TextItem(s, tuple(bb) if bb else None))
        return items
    return [TextItem(w) for line in text.splitlines() for w in line.split()]
