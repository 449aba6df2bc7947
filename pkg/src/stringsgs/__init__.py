"""Text-aware Gaussian splatting: selective text refinement and OCR-based evaluation."""

__version__ = "0.1.0"
