"""Screen geometry for the river overview and the per-layer treemap.

Pure geometry on abstract canvas units. The river encodes per-layer datapath
distances as vertical separation; the treemap nests shared set regions inside
parent sets using the squarified algorithm and picks, among all parent
assignments and sibling insertion orders, the placement that keeps shared
cells closest to the mean of their member sets' centers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .analytics import SetRelation
from .errors import ValidationError


@dataclass(frozen=True)
class Rect:
    x: float
    y: float
    w: float
    h: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class RiverLayout:
    source: np.ndarray  # (m, 2) points
    adversarial: np.ndarray
    target: np.ndarray


@dataclass(frozen=True)
class TreemapLayout:
    cells: tuple[tuple[frozenset, Rect], ...]
    canvas: Rect
    set_rects: tuple[tuple[object, Rect], ...] = ()  # level-1 rect per datapath set
    parents: tuple[tuple[frozenset, object], ...] = ()  # region -> assigned parent set


def river_layout(d1, d2, d3, canvas: Rect, scale: float = 1.0) -> RiverLayout:
    """Three polylines, one point per layer.

    Source and target sit scale*d1 apart, symmetric about the canvas midline;
    the adversarial curve divides the gap in the ratio d2 : d3. When d2 and
    d3 are both zero the ratio is undefined and the midpoint is used, which
    also collapses all three curves onto the midline when d1 is zero too.
    """
    d1, d2, d3 = (np.asarray(d, dtype=np.float64) for d in (d1, d2, d3))
    if not d1.shape == d2.shape == d3.shape or d1.ndim != 1 or len(d1) == 0:
        raise ValidationError("distance series must share one non-empty length", "series")
    if np.any(d1 < 0) or np.any(d2 < 0) or np.any(d3 < 0):
        raise ValidationError("distances must be >= 0", "series")
    if scale <= 0:
        raise ValidationError("scale must be > 0", "scale")
    if canvas.w <= 0 or canvas.h <= 0:
        raise ValidationError("canvas must have positive size", "canvas")
    m = len(d1)
    if m == 1:
        xs = np.array([canvas.x + canvas.w / 2.0])
    else:
        xs = canvas.x + canvas.w * np.arange(m) / (m - 1)
    mid = canvas.y + canvas.h / 2.0
    y_src = mid - scale * d1 / 2.0
    y_tar = mid + scale * d1 / 2.0
    total = d2 + d3
    ratio = np.where(total > 0, np.divide(d2, np.where(total > 0, total, 1.0)), 0.5)
    y_adv = y_src + ratio * (y_tar - y_src)
    return RiverLayout(
        source=np.column_stack([xs, y_src]),
        adversarial=np.column_stack([xs, y_adv]),
        target=np.column_stack([xs, y_tar]),
    )


def _worst_ratio(areas, side: float) -> float:
    s = sum(areas)
    worst = 0.0
    for a in areas:
        worst = max(worst, (side * side * a) / (s * s), (s * s) / (side * side * a))
    return worst


def _squarify(items, rect: Rect):
    """Squarified treemap of (key, weight) items, greedy by worst aspect ratio.

    Items are consumed in the given order; callers control placement by
    permuting the sequence.
    """
    total = sum(w for _, w in items)
    placed = []
    scale = rect.area / total
    remaining = rect
    row = []

    def lay(row, remaining: Rect) -> Rect:
        s = sum(a for _, a in row)
        if remaining.w >= remaining.h:
            # vertical strip on the left, cells stacked downward
            strip_w = s / remaining.h
            y = remaining.y
            for key, a in row:
                h = a / strip_w
                placed.append((key, Rect(remaining.x, y, strip_w, h)))
                y += h
            return Rect(remaining.x + strip_w, remaining.y, remaining.w - strip_w, remaining.h)
        strip_h = s / remaining.w
        x = remaining.x
        for key, a in row:
            w = a / strip_h
            placed.append((key, Rect(x, remaining.y, w, strip_h)))
            x += w
        return Rect(remaining.x, remaining.y + strip_h, remaining.w, remaining.h - strip_h)

    for key, weight in items:
        area = weight * scale
        side = min(remaining.w, remaining.h)
        if row and _worst_ratio([a for _, a in row + [(key, area)]], side) > _worst_ratio(
            [a for _, a in row], side
        ):
            remaining = lay(row, remaining)
            row = [(key, area)]
        else:
            row.append((key, area))
    if row:
        lay(row, remaining)
    return placed


def _layout_once(relation: SetRelation, canvas: Rect, parent_of, set_order, child_orders):
    """One concrete nesting: parent assignment plus fixed sibling orders."""
    children = {sid: [] for sid in set_order}
    for sig, fms in relation.regions:
        children[parent_of[sig]].append((sig, len(fms)))
    for sid in children:
        children[sid].sort(key=child_orders[sid])
    set_items = [
        (sid, sum(w for _, w in children[sid])) for sid in set_order if children[sid]
    ]
    cells = []
    set_rects = []
    for sid, rect in _squarify(set_items, canvas):
        set_rects.append((sid, rect))
        cells.extend(_squarify(children[sid], rect))
    return TreemapLayout(
        cells=tuple(cells),
        canvas=canvas,
        set_rects=tuple(set_rects),
        parents=tuple(sorted(parent_of.items(), key=lambda kv: tuple(sorted(map(str, kv[0]))))),
    )


def treemap_objective(layout: TreemapLayout, relation: SetRelation) -> float:
    """Sum over shared regions of squared distance from each shared cell's
    center to the mean center of its member sets' bounding rectangles."""
    cell_of = dict(layout.cells)
    for sig, _ in relation.regions:
        if sig not in cell_of:
            raise ValidationError(f"region {sorted(map(str, sig))} has no cell", "layout")

    def set_center(set_id):
        rects = [rect for sig, rect in layout.cells if set_id in sig]
        x0 = min(r.x for r in rects)
        y0 = min(r.y for r in rects)
        x1 = max(r.x + r.w for r in rects)
        y1 = max(r.y + r.h for r in rects)
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    total = 0.0
    for sig, _ in relation.regions:
        if len(sig) < 2:
            continue
        cx, cy = cell_of[sig].center
        centers = [set_center(sid) for sid in sig]
        mx = sum(c[0] for c in centers) / len(centers)
        my = sum(c[1] for c in centers) / len(centers)
        total += (cx - mx) ** 2 + (cy - my) ** 2
    return total


def _set_sizes(relation: SetRelation):
    sizes = {}
    for sig, fms in relation.regions:
        for sid in sig:
            sizes[sid] = sizes.get(sid, 0) + len(fms)
    return sizes


def treemap_layout(relation: SetRelation, canvas: Rect) -> TreemapLayout:
    """Optimal nested squarified layout for up to three datapath sets.

    Enumerates every parent assignment of shared regions (any member set) and
    every sibling insertion order at both levels, preferring the paper-default
    candidate (largest set as parent, larger siblings first) among ties.
    """
    if not relation.regions:
        raise ValidationError("relation has no regions", "relation")
    if canvas.w <= 0 or canvas.h <= 0:
        raise ValidationError("canvas must have positive size", "canvas")
    sizes = _set_sizes(relation)
    set_ids = sorted(sizes, key=lambda sid: (-sizes[sid], str(sid)))
    if len(set_ids) > 3:
        raise ValidationError("treemap supports at most 3 datapaths", "relation")

    shared = [sig for sig, _ in relation.regions if len(sig) >= 2]
    parent_choices = [sorted(sig, key=lambda sid: (-sizes[sid], str(sid))) for sig in shared]
    region_size = {sig: len(fms) for sig, fms in relation.regions}

    def default_child_key(entry):
        sig, w = entry
        return (-w, tuple(sorted(map(str, sig))))

    best = None
    for combo in itertools.product(*parent_choices) if shared else [()]:
        parent_of = {sig: sid for sig, sid in zip(shared, combo)}
        for sig, _ in relation.regions:
            if len(sig) == 1:
                parent_of[sig] = next(iter(sig))
        for set_order in itertools.permutations(set_ids):
            per_set = {
                sid: sorted(
                    (sig for sig, p in parent_of.items() if p == sid and sig in region_size),
                    key=lambda sig: (-region_size[sig], tuple(sorted(map(str, sig)))),
                )
                for sid in set_ids
            }
            order_spaces = [
                list(itertools.permutations(range(len(per_set[sid])))) for sid in set_ids
            ]
            for orders in itertools.product(*order_spaces):
                child_orders = {}
                for sid, perm in zip(set_ids, orders):
                    rank = {sig: perm.index(i) for i, sig in enumerate(per_set[sid])}
                    child_orders[sid] = lambda entry, rank=rank: rank[entry[0]]
                layout = _layout_once(relation, canvas, parent_of, set_order, child_orders)
                value = treemap_objective(layout, relation)
                if best is None or value < best[0] - 1e-12:
                    best = (value, layout)
    return best[1]


def river_svg(layout: RiverLayout, width: float = 640, height: float = 360) -> str:
    """Standalone SVG of the three river curves."""
    def poly(points, color):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        return (f'<polyline points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="6" stroke-linejoin="round" opacity="0.85"/>')

    body = "\n".join([
        poly(layout.source, "#4878a8"),
        poly(layout.adversarial, "#c04848"),
        poly(layout.target, "#48a868"),
    ])
    return (f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}">\n'
            f"{body}\n</svg>\n")


def treemap_svg(layout: TreemapLayout) -> str:
    """Standalone SVG of treemap cells, shaded by membership count."""
    fills = {1: "#d8e4f0", 2: "#a8c0dc", 3: "#7898c0"}
    parts = []
    for sig, rect in layout.cells:
        label = "&amp;".join(sorted(map(str, sig)))
        parts.append(
            f'<rect x="{rect.x:.2f}" y="{rect.y:.2f}" width="{rect.w:.2f}" '
            f'height="{rect.h:.2f}" fill="{fills.get(len(sig), "#506888")}" '
            f'stroke="#202830" stroke-width="1"><title>{label}</title></rect>'
        )
    c = layout.canvas
    return (f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'viewBox="{c.x} {c.y} {c.w} {c.h}">\n' + "\n".join(parts) + "\n</svg>\n")
