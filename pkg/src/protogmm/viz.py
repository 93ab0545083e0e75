"""Self-contained SVG scatter export; no plotting dependency.

Samples are dots colored by predicted class, mixture component means are
squares, target prototypes are triangles. Embeddings with more than two
dimensions are projected onto the top-2 principal components of the plotted
set, and overlays use the same basis.
"""
from __future__ import annotations

import numpy as np

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def pca_basis(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(center, (D,2) basis) of the top-2 principal components."""
    center = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - center, full_matrices=False)
    return center, vt[:2].T


def project_2d(points: np.ndarray, center: np.ndarray, basis: np.ndarray) -> np.ndarray:
    return (points - center) @ basis


def _color(c: int) -> str:
    return PALETTE[c % len(PALETTE)]


def scatter_svg(
    points: np.ndarray,
    classes: np.ndarray,
    component_means: list[np.ndarray] | None = None,
    prototypes: np.ndarray | None = None,
    prototype_mask: np.ndarray | None = None,
    size: int = 640,
    margin: int = 30,
) -> str:
    """Render a 2-D scatter with optional overlays to an SVG string."""
    points = np.atleast_2d(points)
    overlays = [points]
    if component_means is not None:
        overlays.extend(np.atleast_2d(m) for m in component_means)
    if prototypes is not None and prototype_mask is not None and prototype_mask.any():
        overlays.append(np.atleast_2d(prototypes[prototype_mask]))
    stacked = np.concatenate(overlays, axis=0)
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)

    def to_px(p):
        x = margin + (p[0] - lo[0]) / span[0] * (size - 2 * margin)
        y = size - margin - (p[1] - lo[1]) / span[1] * (size - 2 * margin)
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for p, c in zip(points, classes):
        x, y = to_px(p)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2" fill="{_color(int(c))}" fill-opacity="0.55"/>')
    if component_means is not None:
        for c, means in enumerate(component_means):
            for m in np.atleast_2d(means):
                x, y = to_px(m)
                parts.append(
                    f'<rect x="{x - 4:.2f}" y="{y - 4:.2f}" width="8" height="8" '
                    f'fill="{_color(c)}" stroke="black" stroke-width="1"/>'
                )
    if prototypes is not None and prototype_mask is not None:
        for c in np.flatnonzero(prototype_mask):
            x, y = to_px(prototypes[c])
            parts.append(
                f'<polygon points="{x:.2f},{y - 6:.2f} {x - 5:.2f},{y + 5:.2f} {x + 5:.2f},{y + 5:.2f}" '
                f'fill="{_color(int(c))}" stroke="black" stroke-width="1"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
