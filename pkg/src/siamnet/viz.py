"""First-layer filter visualization: a tile grid sorted by hue."""

import math

import numpy as np

from .network import NetworkParams


def mean_hue(tile: np.ndarray) -> float:
    """Mean HSV hue in degrees of an RGB tile [3,h,w] in [0,1].

    Achromatic pixels (max == min) have hue 0, so a grayscale tile sorts
    by its position only.
    """
    r, g, b = tile[0], tile[1], tile[2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = mx - mn
    hue = np.zeros_like(mx)
    nz = delta > 0
    rmax = nz & (mx == r)
    gmax = nz & ~rmax & (mx == g)
    bmax = nz & ~rmax & ~gmax
    hue[rmax] = 60.0 * (((g - b)[rmax] / delta[rmax]) % 6.0)
    hue[gmax] = 60.0 * ((b - r)[gmax] / delta[gmax] + 2.0)
    hue[bmax] = 60.0 * ((r - g)[bmax] / delta[bmax] + 4.0)
    return float(hue.mean())


def filter_grid(params: NetworkParams, separator: int = 0) -> np.ndarray:
    """Render the C1 filters as a uint8 [H,W,3] grid image.

    Each filter is min-max normalized to [0,255] on its own; tiles are
    laid out in ascending mean-hue order (stable, so equal hues keep
    their filter index order) with 1-px separators.
    """
    filters = params.sets[0].c1_w
    k = filters.shape[0]
    kh, kw = filters.shape[2], filters.shape[3]
    tiles = []
    for i in range(k):
        t = filters[i]
        lo, hi = t.min(), t.max()
        tiles.append((t - lo) / (hi - lo) if hi > lo else np.zeros_like(t))
    order = np.argsort([mean_hue(t) for t in tiles], kind="stable")
    cols = math.ceil(math.sqrt(k))
    rows = math.ceil(k / cols)
    grid = np.full((rows * kh + rows - 1, cols * kw + cols - 1, 3),
                   separator, dtype=np.uint8)
    for pos, fi in enumerate(order):
        r, c = divmod(pos, cols)
        y, x = r * (kh + 1), c * (kw + 1)
        grid[y:y + kh, x:x + kw] = np.round(tiles[fi] * 255.0).transpose(1, 2, 0)
    return grid


def save_filter_grid(params: NetworkParams, path) -> None:
    from PIL import Image

    Image.fromarray(filter_grid(params)).save(path)
