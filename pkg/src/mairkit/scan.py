"""2D -> 1D scan orders: nested S-shaped stripes and the baseline traversals.

A :class:`Permutation` stores ``order[t]`` = row-major index of the cell
visited at sequence step ``t``. Direction 0 of every strategy starts at the
top-left cell; direction 1 is its reverse, direction 2 the same path on the
horizontally mirrored grid, direction 3 the reverse of direction 2.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import Tensor


class Strategy(str, enum.Enum):
    NSS = "nss"
    Z = "z"
    S = "s"
    LOCAL_WINDOW = "local_window"
    HILBERT = "hilbert"


@dataclass(frozen=True)
class ScanSpec:
    strategy: Strategy = Strategy.NSS
    stripe_width: int = 4
    shifted: bool = False
    direction: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.stripe_width < 1:
            raise ValueError(f"stripe width must be >= 1, got {self.stripe_width}")
        if self.direction not in (0, 1, 2, 3):
            raise ValueError(f"direction must be 0..3, got {self.direction}")
        if self.shifted and self.strategy is not Strategy.NSS:
            raise ValueError("shifted stripes only apply to the NSS strategy")

    def with_direction(self, direction: int) -> "ScanSpec":
        return ScanSpec(self.strategy, self.stripe_width, self.shifted, direction)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d


@dataclass(frozen=True, eq=False)
class Permutation:
    order: np.ndarray
    h: int
    w: int
    spec: ScanSpec | None = None

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.intp)
        order.flags.writeable = False
        object.__setattr__(self, "order", order)

    def __len__(self) -> int:
        return self.order.size

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(self.order.size)
        return inv

    def is_bijection(self) -> bool:
        return np.array_equal(np.sort(self.order), np.arange(self.h * self.w))

    def rows_cols(self) -> tuple[np.ndarray, np.ndarray]:
        return np.divmod(self.order, self.w)

    def to_json(self) -> str:
        return json.dumps({
            "h": self.h,
            "w": self.w,
            "spec": self.spec.to_dict() if self.spec else None,
            "order": self.order.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Permutation":
        d = json.loads(text)
        spec = ScanSpec(**d["spec"]) if d.get("spec") else None
        return cls(np.array(d["order"]), d["h"], d["w"], spec)


# ---------------------------------------------------------------------------
# stripes


def shifted_stripe_bounds(W: int, w_s: int) -> list[int]:
    """Column widths of shifted stripes: w_s/2, then w_s, ..., then the remainder."""
    if w_s % 2:
        raise ValueError(f"shifted stripes need an even stripe width, got {w_s}")
    if W < w_s:
        warnings.warn(f"width {W} < stripe width {w_s}: using a single unshifted stripe",
                      stacklevel=2)
        return [W]
    widths = [w_s // 2]
    rest = W - w_s // 2
    while rest > w_s:
        widths.append(w_s)
        rest -= w_s
    if rest:
        widths.append(rest)
    return widths


def stripe_widths(W: int, w_s: int, shifted: bool = False) -> list[int]:
    if shifted:
        return shifted_stripe_bounds(W, w_s)
    if w_s > W:
        raise ValueError(f"stripe width {w_s} exceeds grid width {W}")
    widths = [w_s] * (W // w_s)
    if W % w_s:
        widths.append(W % w_s)
    return widths


def stripe_ranges(W: int, w_s: int, shifted: bool = False) -> list[tuple[int, int]]:
    edges = np.concatenate([[0], np.cumsum(stripe_widths(W, w_s, shifted))])
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


# ---------------------------------------------------------------------------
# base (direction 0) orders


def _nss(H: int, W: int, w_s: int, shifted: bool) -> list[int]:
    order: list[int] = []
    exit_col = None
    for s, (c0, c1) in enumerate(stripe_ranges(W, w_s, shifted)):
        rows = range(H) if s % 2 == 0 else range(H - 1, -1, -1)
        left_first = exit_col is None or abs(c0 - exit_col) <= abs(c1 - 1 - exit_col)
        for i, r in enumerate(rows):
            cols = range(c0, c1) if (i % 2 == 0) == left_first else range(c1 - 1, c0 - 1, -1)
            order.extend(r * W + c for c in cols)
        exit_col = order[-1] % W
    return order


def _s_scan(H: int, W: int) -> list[int]:
    order: list[int] = []
    for r in range(H):
        cols = range(W) if r % 2 == 0 else range(W - 1, -1, -1)
        order.extend(r * W + c for c in cols)
    return order


def _local_window(H: int, W: int, w_s: int) -> list[int]:
    order: list[int] = []
    for r0 in range(0, H, w_s):
        for c0 in range(0, W, w_s):
            for r in range(r0, min(r0 + w_s, H)):
                order.extend(r * W + c for c in range(c0, min(c0 + w_s, W)))
    return order


def _sgn(v: int) -> int:
    return (v > 0) - (v < 0)


def _gilbert(x, y, ax, ay, bx, by, out):
    """Generalized Hilbert curve over the rectangle spanned by (ax, ay) and (bx, by)."""
    w = abs(ax + ay)
    h = abs(bx + by)
    dax, day = _sgn(ax), _sgn(ay)
    dbx, dby = _sgn(bx), _sgn(by)
    if h == 1:
        for _ in range(w):
            out.append((x, y))
            x, y = x + dax, y + day
        return
    if w == 1:
        for _ in range(h):
            out.append((x, y))
            x, y = x + dbx, y + dby
        return
    ax2, ay2 = ax // 2, ay // 2
    bx2, by2 = bx // 2, by // 2
    w2 = abs(ax2 + ay2)
    h2 = abs(bx2 + by2)
    if 2 * w > 3 * h:
        if w2 % 2 and w > 2:
            ax2, ay2 = ax2 + dax, ay2 + day
        _gilbert(x, y, ax2, ay2, bx, by, out)
        _gilbert(x + ax2, y + ay2, ax - ax2, ay - ay2, bx, by, out)
    else:
        if h2 % 2 and h > 2:
            bx2, by2 = bx2 + dbx, by2 + dby
        _gilbert(x, y, bx2, by2, ax2, ay2, out)
        _gilbert(x + bx2, y + by2, ax, ay, bx - bx2, by - by2, out)
        _gilbert(x + (ax - dax) + (bx2 - dbx), y + (ay - day) + (by2 - dby),
                 -bx2, -by2, -(ax - ax2), -(ay - ay2), out)


def _hilbert(H: int, W: int) -> list[int]:
    cells: list[tuple[int, int]] = []
    if W >= H:
        _gilbert(0, 0, W, 0, 0, H, cells)
    else:
        _gilbert(0, 0, 0, H, W, 0, cells)
    return [y * W + x for x, y in cells]


def _base_order(spec: ScanSpec, H: int, W: int) -> list[int]:
    s = spec.strategy
    if s is Strategy.NSS:
        return _nss(H, W, spec.stripe_width, spec.shifted)
    if s is Strategy.Z:
        return list(range(H * W))
    if s is Strategy.S:
        return _s_scan(H, W)
    if s is Strategy.LOCAL_WINDOW:
        return _local_window(H, W, spec.stripe_width)
    return _hilbert(H, W)


@lru_cache(maxsize=512)
def build_permutation(spec: ScanSpec, H: int, W: int) -> Permutation:
    """Scan order for one direction of one strategy (cached per spec and grid)."""
    if H < 1 or W < 1:
        raise ValueError(f"grid must be at least 1×1, got {H}×{W}")
    order = np.asarray(_base_order(spec, H, W), dtype=np.intp)
    if spec.direction >= 2:
        r, c = np.divmod(order, W)
        order = r * W + (W - 1 - c)
    if spec.direction % 2 == 1:
        order = order[::-1].copy()
    return Permutation(order, H, W, spec)


def four_directions(spec: ScanSpec, H: int, W: int) -> list[Permutation]:
    return [build_permutation(spec.with_direction(d), H, W) for d in range(4)]


# ---------------------------------------------------------------------------
# applying scans


def apply_scan(feature: Tensor, perm: Permutation) -> Tensor:
    """(..., C, H, W) -> (..., C, L) in scan order."""
    *lead, H, W = feature.shape
    if H * W != len(perm):
        raise ValueError(f"feature has {H}×{W}={H * W} cells, permutation covers {len(perm)}")
    flat = T.reshape(feature, (*lead, H * W))
    return T.take(flat, perm.order, axis=-1)


def inverse_scan(seq: Tensor, perm: Permutation) -> Tensor:
    """(..., C, L) -> (..., C, H, W), undoing :func:`apply_scan`."""
    *lead, L = seq.shape
    if L != len(perm):
        raise ValueError(f"sequence length {L} does not match permutation length {len(perm)}")
    grid = T.take(seq, perm.inverse, axis=-1)
    return T.reshape(grid, (*lead, perm.h, perm.w))


# ---------------------------------------------------------------------------
# analysis


def continuity_score(perm: Permutation) -> float:
    """Fraction of consecutive steps that move to a 4-adjacent cell."""
    if len(perm) < 2:
        raise ValueError("continuity needs at least two cells")
    r, c = perm.rows_cols()
    step = np.abs(np.diff(r)) + np.abs(np.diff(c))
    return float(np.mean(step == 1))


def locality_profile(perm: Permutation, n: int) -> int:
    """Largest bounding-box area covered by any n consecutive steps."""
    if not 1 <= n <= len(perm):
        raise ValueError(f"window length must be in [1, {len(perm)}], got {n}")
    r, c = perm.rows_cols()
    rw = sliding_window_view(r, n)
    cw = sliding_window_view(c, n)
    area = (rw.max(1) - rw.min(1) + 1) * (cw.max(1) - cw.min(1) + 1)
    return int(area.max())


def locality_box_width(perm: Permutation, n: int) -> int:
    """Largest column extent covered by any n consecutive steps."""
    _, c = perm.rows_cols()
    cw = sliding_window_view(c, n)
    return int((cw.max(1) - cw.min(1) + 1).max())


# ---------------------------------------------------------------------------
# rendering


def render_svg(perms: list[Permutation], cell: int = 24) -> str:
    """Scan paths as polylines over the grid, one per direction, with stripe/window edges dashed."""
    H, W = perms[0].h, perms[0].w
    colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"]
    pad = cell // 2
    width, height = W * cell + 2 * pad, H * cell + 2 * pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="{pad}" y="{pad}" width="{W * cell}" height="{H * cell}" '
             f'fill="white" stroke="black"/>']
    spec = perms[0].spec
    if spec is not None and spec.strategy in (Strategy.NSS, Strategy.LOCAL_WINDOW):
        if spec.strategy is Strategy.NSS:
            xs = [b for _, b in stripe_ranges(W, spec.stripe_width, spec.shifted)][:-1]
            ys = []
        else:
            xs = list(range(spec.stripe_width, W, spec.stripe_width))
            ys = list(range(spec.stripe_width, H, spec.stripe_width))
        for x in xs:
            X = pad + x * cell
            parts.append(f'<line x1="{X}" y1="{pad}" x2="{X}" y2="{pad + H * cell}" '
                         f'stroke="gray" stroke-dasharray="4 3"/>')
        for y in ys:
            Y = pad + y * cell
            parts.append(f'<line x1="{pad}" y1="{Y}" x2="{pad + W * cell}" y2="{Y}" '
                         f'stroke="gray" stroke-dasharray="4 3"/>')
    for k, perm in enumerate(perms):
        r, c = perm.rows_cols()
        off = (k - (len(perms) - 1) / 2) * cell * 0.08
        pts = " ".join(f"{pad + (cc + 0.5) * cell + off:.1f},{pad + (rr + 0.5) * cell + off:.1f}"
                       for rr, cc in zip(r, c))
        d = perm.spec.direction if perm.spec else k
        parts.append(f'<polyline fill="none" stroke="{colors[k % 4]}" stroke-width="1.5" '
                     f'points="{pts}"><title>direction {d}</title></polyline>')
    parts.append("</svg>")
    return "\n".join(parts)
