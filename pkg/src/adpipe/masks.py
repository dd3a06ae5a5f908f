"""Crowd-mask analytics and the segmentation quality score (SQS).

SQS = S_cp * S_cl * S_sp where

* S_cp = a / max_i a_i           (fragmentation)
* S_cl = a' / a                  (holes; a' is the hole-filled area)
* S_sp = p_j / (2 sqrt(pi a_j))  (compactness of the largest component; p_j is a
  Euclidean estimate of its outline length)

Lower is better; an ideal disk scores about 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .errors import EmptyMaskError, InvalidInputError, NoCandidateError

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Component:
    label: int
    area: int
    mask: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SqsReport:
    s_cp: float
    s_cl: float
    s_sp: float
    sqs: float
    a: int
    a_i: tuple
    a_prime: int
    p_j: float
    a_j: int

    def as_dict(self) -> dict:
        return {
            "s_cp": self.s_cp,
            "s_cl": self.s_cl,
            "s_sp": self.s_sp,
            "sqs": self.sqs,
            "a": self.a,
            "a_i": list(self.a_i),
            "a_prime": self.a_prime,
            "p_j": self.p_j,
            "a_j": self.a_j,
        }


def _as_bool(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise InvalidInputError(f"mask must be 2D, got shape {m.shape}")
    return m.astype(bool)


def connected_components(m) -> list[Component]:
    """8-connected crowd components, largest first.

    Labels follow raster-scan order of each component's first pixel; equal
    areas keep that order.
    """
    m = _as_bool(m)
    labels, n = ndimage.label(m, structure=_EIGHT)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    order = sorted(range(n), key=lambda i: (-areas[i], i))
    return [Component(label=i + 1, area=int(areas[i]), mask=labels == i + 1) for i in order]


def largest_component(m) -> np.ndarray:
    comps = connected_components(m)
    if not comps:
        raise EmptyMaskError("mask has no crowd pixels")
    return comps[0].mask


def fill_holes(m) -> np.ndarray:
    """Fill background regions (4-connected) that do not reach the border."""
    return ndimage.binary_fill_holes(_as_bool(m), structure=_FOUR)


# corner-to-corner steps of the pixel sides exposed on each side of a pixel at (col, row)
_SIDES = (
    ((-1, 0), (0, 0), (1, 0)),  # top, heading +x
    ((0, 1), (1, 0), (1, 1)),  # right, heading +y
    ((1, 0), (1, 1), (0, 1)),  # bottom, heading -x
    ((0, -1), (0, 1), (0, 0)),  # left, heading -y
)
# polygon simplification tolerance relative to sqrt(component area)
PERIMETER_EPS = 0.02


def exposed_edges(component) -> int:
    """Number of pixel sides shared with background or the image border."""
    c = _as_bool(component)
    padded = np.pad(c, 1)
    inner = padded[1:-1, 1:-1]
    exposed = 0
    for (dy, dx), _, _ in _SIDES:
        neighbour = padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
        exposed += int(np.count_nonzero(inner & ~neighbour))
    return exposed


def boundary_loops(component) -> list[np.ndarray]:
    """Closed pixel-corner outlines (outer boundary and holes) as ``(n, 2)`` ``(x, y)`` vertices.

    Every exposed pixel side becomes a directed unit step with the crowd on the
    same side; at a vertex shared by two diagonal pixels the walk turns away
    from the pixel it is following, so 8-connected pixels share one outline.
    """
    c = _as_bool(component)
    padded = np.pad(c, 1)
    inner = padded[1:-1, 1:-1]
    out: dict = {}
    for (dy, dx), a, b in _SIDES:
        neighbour = padded[1 + dy : padded.shape[0] - 1 + dy, 1 + dx : padded.shape[1] - 1 + dx]
        rows, cols = np.nonzero(inner & ~neighbour)
        for r, q in zip(rows.tolist(), cols.tolist()):
            out.setdefault((q + a[0], r + a[1]), []).append((q + b[0], r + b[1]))
    loops = []
    while out:
        start = min(out)
        loop = [start]
        prev, cur = None, start
        while True:
            cands = out[cur]
            if len(cands) == 1 or prev is None:
                nxt = cands[0]
            else:
                dx, dy = cur[0] - prev[0], cur[1] - prev[1]
                nxt = min(cands, key=lambda b: dx * (b[1] - cur[1]) - dy * (b[0] - cur[0]))
            cands.remove(nxt)
            if not cands:
                del out[cur]
            prev, cur = cur, nxt
            if cur == start:
                break
            loop.append(cur)
        loops.append(np.array(loop, dtype=float))
    return loops


def contour_perimeter(component) -> float:
    """Euclidean perimeter of a component's pixel-corner outline (holes included).

    Each outline is simplified with Douglas-Peucker at a tolerance of
    ``PERIMETER_EPS * sqrt(area)``: one-pixel stair-steps on slanted or curved
    edges collapse into chords, axis-aligned edges and rectangle corners are
    kept exactly, and the result scales exactly with pixel replication.
    """
    c = _as_bool(component)
    if not c.any():
        raise InvalidInputError("perimeter of an empty mask")
    eps = PERIMETER_EPS * math.sqrt(np.count_nonzero(c))
    total = 0.0
    for loop in boundary_loops(c):
        poly = cv2.approxPolyDP(loop.astype(np.float32).reshape(-1, 1, 2), eps, True).reshape(-1, 2)
        if len(poly) < 3:
            poly = loop
        total += float(np.linalg.norm(np.diff(np.vstack([poly, poly[:1]]), axis=0), axis=1).sum())
    return total


def sqs(m) -> SqsReport:
    m = _as_bool(m)
    comps = connected_components(m)
    if not comps:
        raise EmptyMaskError("SQS undefined for an empty mask")
    a = int(sum(c.area for c in comps))
    a_prime = int(np.count_nonzero(fill_holes(m)))
    largest = comps[0]
    p_j = contour_perimeter(largest.mask)
    a_j = largest.area
    s_cp = a / a_j
    s_cl = a_prime / a
    s_sp = p_j / (2.0 * math.sqrt(math.pi * a_j))
    return SqsReport(
        s_cp=s_cp,
        s_cl=s_cl,
        s_sp=s_sp,
        sqs=s_cp * s_cl * s_sp,
        a=a,
        a_i=tuple(c.area for c in comps),
        a_prime=a_prime,
        p_j=p_j,
        a_j=a_j,
    )


def pick_seed(candidates) -> tuple:
    """Apply the half-max-area rule to ``(frame_index, area, sqs)`` triples.

    Frames whose crowd area is below half of the largest area are ignored;
    of the rest, the lowest SQS wins and ties go to the earliest frame.
    Returns the winning triple.
    """
    candidates = [c for c in candidates if c[1] > 0]
    if not candidates:
        raise NoCandidateError("no frame contains any crowd pixels")
    max_area = max(c[1] for c in candidates)
    viable = [c for c in candidates if 2 * c[1] >= max_area]
    return min(viable, key=lambda c: (c[2], c[0]))


def select_seed_frame(masks) -> tuple[int, SqsReport]:
    """Pick the seed among ``(frame_index, mask)`` pairs; see :func:`pick_seed`."""
    reports = {}
    candidates = []
    for index, mask in masks:
        area = int(np.count_nonzero(mask))
        if area == 0:
            continue
        reports[index] = sqs(mask)
        candidates.append((index, area, reports[index].sqs))
    index, _, _ = pick_seed(candidates)
    return index, reports[index]
