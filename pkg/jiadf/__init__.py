"""Joint-individual multimodal classification with adaptive decision fusion."""

__version__ = "1.0.0"
