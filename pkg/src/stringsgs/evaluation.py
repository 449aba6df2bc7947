"""Held-out view evaluation shared by training runs and the ``eval`` command."""

from __future__ import annotations

import csv
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image

from .camera import CameraPose
from .colmap_io import SceneBundle
from .gaussians import SplatScene
from .metrics import psnr, ssim
from .ocr import CerReport, TextItem, ViewScore, aggregate, read_gt_sidecar, recognize_builtin, recognize_external, score_view
from .render import render

# called as recognizer(image, view_name) -> recognized items
Recognizer = Callable[[np.ndarray, str], list[TextItem]]


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255), 0, 255).astype(np.uint8)


def save_png(img: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)


def builtin_recognizer(img: np.ndarray, view: str = "") -> list[TextItem]:
    return recognize_builtin(img)


def make_recognizer(spec: str, workdir=None) -> Recognizer:
    """``builtin`` or ``cmd:<template>``; the external tool reads a PNG written to ``workdir``."""
    if spec == "builtin":
        return builtin_recognizer
    if not spec.startswith("cmd:") or not spec[4:].strip():
        raise ValueError(f"recognizer must be 'builtin' or 'cmd:<template>', got {spec!r}")
    template = spec[4:]
    if "{image}" not in template:
        raise ValueError("external recognizer template must contain {image}")

    def run(img: np.ndarray, view: str = "") -> list[TextItem]:
        d = Path(workdir) if workdir is not None else Path(tempfile.gettempdir())
        path = d / f"ocr_{Path(view).stem or 'view'}.png"
        save_png(img, path)
        return recognize_external(path, template)

    return run


def load_ground_truth(bundle: SceneBundle, gt_dir=None) -> dict[int, list[TextItem]]:
    """Word sidecars ``gt_text/<image stem>.txt`` for the eval views that have one."""
    if gt_dir is None:
        if bundle.root is None:
            return {}
        gt_dir = bundle.root / "gt_text"
    gt_dir = Path(gt_dir)
    out = {}
    for p in bundle.eval_poses:
        f = gt_dir / (Path(p.name).stem + ".txt")
        if f.exists():
            out[p.image_id] = read_gt_sidecar(f)
    return out


@dataclass
class EvalResult:
    psnr: float
    ssim: float
    l1: float
    cer: Optional[float]
    report: CerReport = field(default_factory=CerReport)
    per_view: list[tuple[str, float, float]] = field(default_factory=list)  # (view, psnr, ssim)


def evaluate_scene(
    scene: SplatScene,
    bundle: SceneBundle,
    gt: dict[int, list[TextItem]],
    recognizer: Optional[Recognizer] = builtin_recognizer,
    background=(0.0, 0.0, 0.0),
    poses: Optional[list[CameraPose]] = None,
) -> EvalResult:
    """Mean PSNR, SSIM and L1 over the eval views plus OCR CER where ground truth exists."""
    poses = bundle.eval_poses if poses is None else poses
    scores: list[ViewScore] = []
    per_view = []
    l1s = []
    for p in poses:
        img = render(scene, bundle.intr(p), p, background)
        ref = bundle.images[p.image_id]
        per_view.append((p.name, psnr(img, ref), ssim(img, ref)))
        l1s.append(float(np.abs(img - ref).mean()))
        if recognizer is not None and p.image_id in gt:
            scores.append(score_view(gt[p.image_id], recognizer(img, p.name), p.name))
    report = aggregate(scores)
    if not per_view:
        return EvalResult(float("nan"), float("nan"), float("nan"), None, report)
    return EvalResult(
        float(np.mean([v[1] for v in per_view])),
        float(np.mean([v[2] for v in per_view])),
        float(np.mean(l1s)),
        report.scene_cer,
        report,
        per_view,
    )


REPORT_COLUMNS = ("checkpoint", "view", "gt_chars", "edit_cost", "cer", "psnr", "ssim")
SUMMARY_COLUMNS = ("checkpoint", "psnr", "ssim", "cer", "gaussian_count")


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_reports(results: list[tuple[str, int, EvalResult]], report_path, summary_path) -> str:
    """Per-view CSV, per-checkpoint CSV and a printable summary table."""
    with open(report_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(REPORT_COLUMNS)
        for name, _, res in results:
            cer_by_view = {v.view: v for v in res.report.per_view}
            for view, pv, sv in res.per_view:
                s = cer_by_view.get(view)
                w.writerow([
                    name, view, "" if s is None else s.gt_chars, "" if s is None else s.edit_cost,
                    "" if s is None else _fmt(s.cer), _fmt(pv), _fmt(sv),
                ])
            w.writerow([name, "__scene__", "", "", _fmt(res.cer), _fmt(res.psnr), _fmt(res.ssim)])
    with open(summary_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_COLUMNS)
        for name, count, res in results:
            w.writerow([name, _fmt(res.psnr), _fmt(res.ssim), _fmt(res.cer), count])
    lines = [f"{'checkpoint':<28} {'gaussians':>9} {'psnr':>8} {'ssim':>7} {'cer':>7}"]
    for name, count, res in results:
        cer = "n/a" if res.cer is None else f"{res.cer:.4f}"
        lines.append(f"{name:<28} {count:>9} {res.psnr:>8.3f} {res.ssim:>7.4f} {cer:>7}")
    return "\n".join(lines)
