"""Symbolic-character boxes from segmentation cut-outs.

Cut-outs come either from a JSON file of run-length-encoded masks or from a
4-connected component labeling of the binarized diagram. They are filtered by
bounding-box shape and size, overlapping boxes are merged by IoU, and the
surviving boxes are mapped onto the diagram's patch grid.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .errors import SchemaError


class Box(NamedTuple):
    """Inclusive pixel box."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def area(self) -> int:
        return self.width * self.height


def iou(a: Box, b: Box) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0) + 1
    ih = min(a.y1, b.y1) - max(a.y0, b.y0) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def union_box(a: Box, b: Box) -> Box:
    return Box(min(a.x0, b.x0), min(a.y0, b.y0), max(a.x1, b.x1), max(a.y1, b.y1))


def mask_bbox(mask: np.ndarray) -> Box:
    ys = np.flatnonzero(mask.any(axis=1))
    xs = np.flatnonzero(mask.any(axis=0))
    if len(ys) == 0:
        raise ValueError("empty cut-out mask")
    return Box(int(xs[0]), int(ys[0]), int(xs[-1]), int(ys[-1]))


def box_passes(box: Box, image_size, max_aspect: float = 3.0,
               area_range=(1e-5, 0.01)) -> bool:
    h, w = image_size
    aspect = max(box.width, box.height) / min(box.width, box.height)
    ratio = box.area / float(h * w)
    return aspect <= max_aspect and area_range[0] <= ratio <= area_range[1]


def filter_cutouts(cutouts: Sequence[np.ndarray], image_size, max_aspect: float = 3.0,
                   area_range=(1e-5, 0.01)) -> list[Box]:
    """Bounding boxes of the cut-outs whose shape and size look like a character."""
    boxes = []
    for m in cutouts:
        box = m if isinstance(m, Box) else mask_bbox(np.asarray(m, dtype=bool))
        if box_passes(box, image_size, max_aspect, area_range):
            boxes.append(box)
    return boxes


def _order(boxes):
    return sorted(boxes, key=lambda b: (b.y0, b.x0, b.y1, b.x1))


def merge_boxes_iou(boxes: Sequence[Box], threshold: float = 0.5) -> list[Box]:
    """Union any pair with IoU >= threshold until no such pair is left.

    The first qualifying pair in (y0, x0) order is merged each round, so the
    result is deterministic.
    """
    current = _order(Box(*b) for b in boxes)
    while True:
        pair = next(
            ((i, j) for i in range(len(current)) for j in range(i + 1, len(current))
             if iou(current[i], current[j]) >= threshold),
            None,
        )
        if pair is None:
            return current
        i, j = pair
        merged = union_box(current[i], current[j])
        rest = [b for k, b in enumerate(current) if k not in (i, j)]
        current = _order(rest + [merged])


def boxes_to_patch_mask(boxes: Sequence[Box], grid: int = 8, patch: int = 28) -> np.ndarray:
    """Flag (raster order) every patch whose pixel square meets some box."""
    flags = np.zeros(grid * grid, dtype=np.int8)
    for b in boxes:
        c0, c1 = max(b.x0 // patch, 0), min(b.x1 // patch, grid - 1)
        r0, r1 = max(b.y0 // patch, 0), min(b.y1 // patch, grid - 1)
        for r in range(r0, r1 + 1):
            flags[r * grid + c0:r * grid + c1 + 1] = 1
    return flags


def connected_component_cutouts(image: np.ndarray, threshold: int = 128) -> list[np.ndarray]:
    """One boolean mask per 4-connected blob of dark (< threshold) pixels."""
    labels, n = ndimage.label(np.asarray(image) < threshold)
    return [labels == k for k in range(1, n + 1)]


def component_boxes(image: np.ndarray, threshold: int = 128) -> list[Box]:
    """Bounding boxes of the 4-connected dark blobs (fast path, no full masks)."""
    labels, _ = ndimage.label(np.asarray(image) < threshold)
    return [Box(s[1].start, s[0].start, s[1].stop - 1, s[0].stop - 1)
            for s in ndimage.find_objects(labels)]


def detect_characters(image: np.ndarray, threshold: int = 128, max_aspect: float = 3.0,
                      area_range=(1e-5, 0.01), iou_threshold: float = 0.5,
                      cutouts: Sequence[np.ndarray] | None = None) -> list[Box]:
    """Full post-processing: cut-outs → filter → IoU merge."""
    image = np.asarray(image)
    if cutouts is None:
        candidates = component_boxes(image, threshold)
    else:
        candidates = cutouts
    kept = filter_cutouts(candidates, image.shape, max_aspect, area_range)
    return merge_boxes_iou(kept, iou_threshold)


def match_boxes(pred: Sequence[Box], truth: Sequence[Box], threshold: float = 0.5):
    """Greedy one-to-one matching; returns (true positives, precision, recall)."""
    pairs = sorted(
        ((iou(p, t), i, j) for i, p in enumerate(pred) for j, t in enumerate(truth)),
        reverse=True,
    )
    used_p, used_t, tp = set(), set(), 0
    for score, i, j in pairs:
        if score < threshold:
            break
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        tp += 1
    precision = tp / len(pred) if pred else 1.0
    recall = tp / len(truth) if truth else 1.0
    return tp, precision, recall


# run-length encoded cut-out files

def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, alternating zeros and ones, starting with zeros."""
    flat = np.asarray(mask, dtype=np.int8).reshape(-1)
    if flat.size == 0:
        return []
    bounds = np.concatenate([[0], np.flatnonzero(np.diff(flat)) + 1, [flat.size]])
    counts = np.diff(bounds).tolist()
    return [0] + counts if flat[0] == 1 else counts


def rle_decode(counts: Sequence[int], height: int, width: int) -> np.ndarray:
    if sum(counts) != height * width:
        raise SchemaError(f"run lengths sum to {sum(counts)}, expected {height * width}")
    flat = np.zeros(height * width, dtype=bool)
    pos, value = 0, False
    for c in counts:
        if value:
            flat[pos:pos + c] = True
        pos += c
        value = not value
    return flat.reshape(height, width)


def save_cutouts(path, masks: Sequence[np.ndarray]) -> None:
    masks = [np.asarray(m, dtype=bool) for m in masks]
    h, w = masks[0].shape if masks else (0, 0)
    doc = {"height": h, "width": w, "masks": [{"counts": rle_encode(m)} for m in masks]}
    Path(path).write_text(json.dumps(doc))


def load_cutouts(path) -> tuple[list[np.ndarray], tuple[int, int]]:
    doc = json.loads(Path(path).read_text())
    try:
        h, w = int(doc["height"]), int(doc["width"])
        masks = [rle_decode(m["counts"], h, w) for m in doc["masks"]]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: malformed cut-out file ({exc})") from exc
    for k, m in enumerate(masks):
        if not m.any():
            raise SchemaError(f"{path}: cut-out {k} is empty")
    return masks, (h, w)


def annotate(image: np.ndarray, boxes: Sequence[Box]) -> np.ndarray:
    """RGB copy of the diagram with the boxes outlined in red."""
    rgb = np.repeat(np.asarray(image, dtype=np.uint8)[:, :, None], 3, axis=2).copy()
    for b in boxes:
        for x in (b.x0, b.x1):
            rgb[b.y0:b.y1 + 1, x] = (255, 0, 0)
        for y in (b.y0, b.y1):
            rgb[y, b.x0:b.x1 + 1] = (255, 0, 0)
    return rgb
