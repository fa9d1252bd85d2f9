"""Eigenvalue-trajectory figures.

:func:`trajectory_svg` writes SVG by hand so the output is byte-stable and
needs no renderer. :func:`save_trajectory_png` draws the same chart with
matplotlib for quick viewing.
"""

from __future__ import annotations

import numpy as np

from .trainer import TrajectoryRecord

WIDTH, HEIGHT = 640, 400
MARGIN = 50
LOG_FLOOR = 1e-12


def _palette(k: int) -> list[str]:
    # evenly spaced hues, fixed saturation/lightness
    return [f"hsl({round(360 * i / max(k, 1))},65%,45%)" for i in range(k)]


def _y_transform(E: np.ndarray, log_y: bool):
    if log_y:
        return np.log10(np.maximum(E, LOG_FLOOR))
    return E


def trajectory_svg(traj: TrajectoryRecord, log_y: bool = False, title: str | None = None) -> str:
    """Standalone SVG with one polyline per tracked eigenvalue."""
    steps = np.asarray(traj.steps, dtype=np.float64)
    E = _y_transform(traj.eig_matrix(), log_y)
    k = E.shape[1]
    x0, x1 = float(steps.min()), float(steps.max())
    y0, y1 = float(E.min()), float(E.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    sx = lambda x: MARGIN + (x - x0) / (x1 - x0) * pw
    sy = lambda y: HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        safe = title.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        out.append(f'<text x="{WIDTH // 2}" y="{MARGIN // 2}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="14">{safe}</text>')
    ylabel = "log10 eigenvalue" if log_y else "eigenvalue"
    out.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">step</text>')
    out.append(f'<text x="14" y="{HEIGHT // 2}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 14 {HEIGHT // 2})">{ylabel}</text>')
    for v, anchor, x, y in ((x0, "start", MARGIN, HEIGHT - MARGIN + 16),
                            (x1, "end", WIDTH - MARGIN, HEIGHT - MARGIN + 16)):
        out.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" '
                   f'font-size="10">{v:g}</text>')
    for v, y in ((y0, HEIGHT - MARGIN), (y1, MARGIN + 10)):
        out.append(f'<text x="{MARGIN - 4}" y="{y}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{v:.3g}</text>')
    for j, colour in enumerate(_palette(k)):
        pts = " ".join(f"{sx(s):.2f},{sy(e):.2f}" for s, e in zip(steps, E[:, j]))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" '
                   f'data-series="lambda_{j + 1}" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_trajectory_png(traj: TrajectoryRecord, path, log_y: bool = False,
                        title: str | None = None, dpi: int = 120) -> None:
    """Matplotlib rendering of the same chart (Agg backend, no metadata)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    E = traj.eig_matrix()
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    colours = plt.cm.viridis(np.linspace(0, 1, E.shape[1]))
    for j in range(E.shape[1]):
        ax.plot(traj.steps, E[:, j], color=colours[j], lw=1.2)
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("eigenvalue")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)

