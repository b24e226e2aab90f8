"""Render a synthetic diagram, detect its letters and show the patch mask."""

import sys
from pathlib import Path

from geosolve.corpus import synthetic_corpus, write_png
from geosolve.detect import Box, annotate, boxes_to_patch_mask, detect_characters, match_boxes

out = Path(sys.argv[1] if len(sys.argv) > 1 else "detect_demo")
out.mkdir(parents=True, exist_ok=True)
problem, truth = synthetic_corpus(1, seed=3)[0]
print(problem.text)
boxes = detect_characters(problem.diagram)
tp, precision, recall = match_boxes(boxes, [Box(*b) for b in truth])
print(f"{len(boxes)} boxes, precision {precision:.2f}, recall {recall:.2f}")
for b in boxes:
    print("  ", tuple(b))
print(boxes_to_patch_mask(boxes).reshape(8, 8))
write_png(out / "diagram.png", problem.diagram)
write_png(out / "annotated.png", annotate(problem.diagram, boxes))
print("wrote", out / "annotated.png")
