"""Figures for labeled grids and sweep results.

PGM and SVG writers are plain text/bytes and byte-stable.  The matplotlib
figures use the Agg backend with fixed styling and no timestamp metadata so
repeated runs produce identical PNG files.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

UNLABELED_GRAY = 48
OUTLINE_GRAY = 0
# fixed per-class colours (class code order), then cycled
PALETTE = ["#3b6fb6", "#e8a33d", "#5aa469", "#c8553d", "#8e6c8a", "#7a7a7a"]


def _require_2d(grid):
    if grid.dim != 2:
        raise InputError(f"rendering needs a 2-D grid, got dimension {grid.dim}")
    if grid.cell_component is None:
        raise InputError("label components before rendering")


def class_gray_levels(n_classes: int) -> list[int]:
    return [int(round(v)) for v in np.linspace(96, 255, n_classes)] if n_classes > 1 else [255]


def component_outline(components: np.ndarray) -> np.ndarray:
    """Cells with a face neighbour in a different component."""
    edge = np.zeros(components.shape, dtype=bool)
    for axis in range(components.ndim):
        a = np.take(components, np.arange(components.shape[axis] - 1), axis=axis)
        b = np.take(components, np.arange(1, components.shape[axis]), axis=axis)
        diff = a != b
        lo = [slice(None)] * components.ndim
        hi = [slice(None)] * components.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        edge[tuple(lo)] |= diff
        edge[tuple(hi)] |= diff
    return edge & (components >= 0)


def _image_rows(arr):
    # grid axis 0 is x1 (columns), axis 1 is x2 (rows, drawn upward)
    return np.flipud(arr.T)


def pgm_bytes(grid) -> bytes:
    _require_2d(grid)
    levels = np.array(class_gray_levels(len(grid.labels)), dtype=np.uint8)
    codes = grid.cell_class.astype(np.int64)
    img = np.where(codes >= 0, levels[np.clip(codes, 0, None)], UNLABELED_GRAY).astype(np.uint8)
    img[component_outline(grid.cell_component)] = OUTLINE_GRAY
    img = _image_rows(img)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    """Parse the binary PGM produced by :func:`pgm_bytes` (rows top to bottom)."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise InputError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def render_2d(grid, path) -> None:
    """Write the grid as a binary PGM, one gray level per class, component outlines black."""
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(grid))


def svg_text(grid, cell_px: int = 2) -> str:
    """SVG with one filled ``<g>`` per component, built from horizontal cell runs."""
    _require_2d(grid)
    img = _image_rows(grid.cell_component)
    h, w = img.shape
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell_px}" height="{h * cell_px}" '
           f'viewBox="0 0 {w} {h}" shape-rendering="crispEdges">']
    for comp in grid.components:
        colour = PALETTE[grid.labels.index(comp.cls) % len(PALETTE)]
        rows, cols = np.nonzero(img == comp.id)
        segs = []
        for r in np.unique(rows):
            cs = cols[rows == r]
            breaks = np.flatnonzero(np.diff(cs) != 1)
            starts = np.concatenate([[cs[0]], cs[breaks + 1]])
            stops = np.concatenate([cs[breaks], [cs[-1]]])
            segs.extend(f"M{a} {r}h{b - a + 1}v1h{a - b - 1}z" for a, b in zip(starts, stops))
        out.append(f'<g id="c{comp.id}" data-class="{comp.cls}" data-touches-boundary='
                   f'"{str(comp.touches_boundary).lower()}"><path fill="{colour}" d="{"".join(segs)}"/></g>')
    out.append("</svg>\n")
    return "\n".join(out)


def write_svg(grid, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg_text(grid))


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"font.size": 10, "axes.titlesize": 11, "svg.hashsalt": "narrownet"})
    return plt


def plot_grid(grid, path, title: str | None = None, points=None) -> None:
    """Matplotlib figure of the class map with component outlines (PNG/PDF by extension)."""
    _require_2d(grid)
    from matplotlib.colors import ListedColormap

    plt = _pyplot()
    n = len(grid.labels)
    cmap = ListedColormap(["#ffffff"] + [PALETTE[i % len(PALETTE)] for i in range(n)])
    fig, ax = plt.subplots(figsize=(5, 5))
    extent = [grid.box.lo[0], grid.box.hi[0], grid.box.lo[1], grid.box.hi[1]]
    ax.imshow(_image_rows(grid.cell_class + 1), cmap=cmap, vmin=0, vmax=n, extent=extent,
              interpolation="nearest")
    outline = np.ma.masked_where(~_image_rows(component_outline(grid.cell_component)),
                                 np.ones(grid.cell_class.T.shape))
    ax.imshow(outline, cmap=ListedColormap(["#000000"]), extent=extent, interpolation="nearest")
    if points is not None:
        x, y = points
        ax.scatter(x[:, 0], x[:, 1], c=[PALETTE[int(c) % len(PALETTE)] for c in y], s=1,
                   edgecolors="none", alpha=0.5)
    counts = grid.component_counts()
    label = ", ".join(f"{k}: {v}" for k, v in counts.items())
    ax.set_title(title or f"components per class ({label})")
    ax.set_xlabel("$x_1$")
    ax.set_ylabel("$x_2$")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_sweep(table, path) -> None:
    """Success rate per (d_in, depth, width) setting, grouped by input dimension."""
    plt = _pyplot()
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 4))
    for row in table:
        ok = row["successes"] > 0
        left.scatter(row["d_in"], row["width"], c="#5aa469" if ok else "#3b6fb6", s=40,
                     marker="o" if ok else "x")
    dims = sorted({r["d_in"] for r in table})
    lim = [min(dims) - 0.5, max(dims) + 1.5]
    left.plot(lim, lim, color="#999999", lw=0.8, ls="--")
    from matplotlib.ticker import MaxNLocator

    left.xaxis.set_major_locator(MaxNLocator(integer=True))
    left.yaxis.set_major_locator(MaxNLocator(integer=True))
    left.set_xlabel("input dimension $d_{in}$")
    left.set_ylabel("network width")
    left.set_title("reached 100% test accuracy (green) or never (blue)")
    labels, rates = [], []
    for row in table:
        labels.append(f"d{row['d_in']} L{row['depth']} w{row['width']}")
        rates.append(100 * row["success_rate"])
    right.bar(range(len(rates)), rates, color=["#5aa469" if row["width"] > row["d_in"] else "#3b6fb6"
                                               for row in table])
    right.set_xticks(range(len(rates)))
    right.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
    right.set_ylabel("runs reaching 100% (%)")
    right.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
