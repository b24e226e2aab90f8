"""Problem data model, tokenization, symbolic-character masks, corpus I/O and
a synthetic problem/diagram generator."""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import executor
from .errors import GenerationError, SchemaError
from .glyphs import GLYPH_H, GLYPH_W, scaled_glyph

IMAGE_SIZE = 224
N_CLASSES = 27
NON_CHARACTER = 26
TYPE_TAGS = ("Angle", "Length", "Other")

_TOKEN_RE = re.compile(
    r"(?P<num>\d+(?:\.\d+)?)(?P<unit>°|[A-Za-z]+)?"
    r"|(?P<var>N_\d+)"
    r"|(?P<word>[A-Za-z]+)"
    r"|(?P<sym>\S)"
)
_LETTER_RE = re.compile(r"^[A-Za-z]$")


class NumberTable(dict):
    """Ordered ``N_i -> value`` map; ``units`` keeps any stripped unit suffix."""

    def __init__(self, *args, units=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.units = dict(units or {})


def substitute_numbers(raw_text: str) -> tuple[list[str], NumberTable]:
    """Replace each numeric literal by ``N_0, N_1, ...`` in order of appearance."""
    tokens: list[str] = []
    table = NumberTable()
    for m in _TOKEN_RE.finditer(raw_text):
        if m.group("num") is not None:
            key = f"N_{len(table)}"
            table[key] = float(m.group("num"))
            if m.group("unit"):
                table.units[key] = m.group("unit")
            tokens.append(key)
        elif m.group("word") is not None:
            word = m.group("word")
            tokens.extend(word if len(word) > 1 and word.isupper() else [word])
        else:
            tokens.append(m.group(0))
    return tokens, table


def restore_numbers(tokens: Sequence[str], table: dict) -> list[str]:
    """Inverse of the substitution: put the original values back in place."""
    out = []
    for t in tokens:
        if t in table:
            v = table[t]
            text = str(int(v)) if float(v).is_integer() else repr(float(v))
            out.append(text + getattr(table, "units", {}).get(t, ""))
        else:
            out.append(t)
    return out


def is_symbolic_character(token: str) -> bool:
    return bool(_LETTER_RE.match(token))


def build_align_mask(tokens: Sequence[str]) -> np.ndarray:
    return np.array([1 if is_symbolic_character(t) else 0 for t in tokens], dtype=np.int8)


def build_merge_mask(m_align) -> np.ndarray:
    """Keep runs of at least two consecutive ones, drop isolated ones."""
    m = np.asarray(m_align, dtype=np.int8)
    out = np.zeros_like(m)
    i, n = 0, len(m)
    while i < n:
        if m[i] == 1:
            j = i
            while j < n and m[j] == 1:
                j += 1
            if j - i >= 2:
                out[i:j] = 1
            i = j
        else:
            i += 1
    return out


def merge_runs(m_merge) -> list[tuple[int, int]]:
    """Maximal runs of ones as half-open ``(start, stop)`` pairs."""
    runs, start = [], None
    for i, v in enumerate(list(m_merge) + [0]):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    return runs


def weak_labels(tokens: Sequence[str]) -> np.ndarray:
    """27-way multi-hot label: letters present in the text, else the non-character class."""
    y = np.zeros(N_CLASSES, dtype=np.int8)
    for t in tokens:
        if is_symbolic_character(t):
            y[ord(t.lower()) - ord("a")] = 1
    if not y.any():
        y[NON_CHARACTER] = 1
    return y


def class_weights(label_rows: Sequence, lo: float = 0.1, hi: float = 10.0) -> np.ndarray:
    """Inverse positive frequency per class, normalized to mean 1 and clipped."""
    labels = np.asarray(label_rows, dtype=np.float64).reshape(-1, N_CLASSES)
    counts = labels.sum(axis=0)
    inv = len(labels) / np.maximum(counts, 1.0)
    w = inv / inv.mean()
    return np.clip(w, lo, hi)


@dataclass
class Problem:
    id: str
    text_tokens: list
    number_table: dict
    diagram: np.ndarray
    choices: list
    gold_program: list
    type_tag: str
    text: str = ""
    answer_index: int | None = None

    @property
    def m_align(self) -> np.ndarray:
        return build_align_mask(self.text_tokens)

    @property
    def m_merge(self) -> np.ndarray:
        return build_merge_mask(self.m_align)

    @property
    def labels(self) -> np.ndarray:
        return weak_labels(self.text_tokens)

    def validate(self, image_size: int = IMAGE_SIZE) -> None:
        if len(self.choices) != 4:
            raise SchemaError(f"{self.id}: choices must have 4 values", self.id, "choices")
        if self.type_tag not in TYPE_TAGS:
            raise SchemaError(f"{self.id}: unknown type {self.type_tag!r}", self.id, "type")
        for t in self.gold_program:
            if t.startswith("N_") and t not in self.number_table:
                raise SchemaError(f"{self.id}: program uses {t} which the text does not define",
                                  self.id, "program")
        if self.diagram.shape != (image_size, image_size):
            raise SchemaError(f"{self.id}: diagram is {self.diagram.shape}", self.id, "diagram_path")


def gold_answer_index(problem: Problem) -> int | None:
    result = executor.execute(problem.gold_program, problem.number_table)
    if not result.ok:
        return None
    return executor.match_choice(result.value, problem.choices)


# image helpers

def resize_image(img: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Mean-pool for integer downscale factors, bilinear otherwise."""
    img = np.asarray(img)
    h, w = img.shape
    if (h, w) == (size, size):
        return img.astype(np.uint8)
    if h % size == 0 and w % size == 0:
        fy, fx = h // size, w // size
        pooled = img.astype(np.float64).reshape(size, fy, size, fx).mean(axis=(1, 3))
        return np.rint(pooled).astype(np.uint8)
    pil = Image.fromarray(img.astype(np.uint8), mode="L")
    return np.asarray(pil.resize((size, size), Image.BILINEAR), dtype=np.uint8)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def write_png(path, img: np.ndarray) -> None:
    """Grayscale (h×w) or RGB (h×w×3) uint8 PNG."""
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)


_REQUIRED = ("id", "text", "diagram_path", "choices", "program", "type")


def problem_from_record(rec: dict, base_dir: Path, image_size: int = IMAGE_SIZE) -> Problem:
    pid = str(rec.get("id", "<missing id>"))
    for key in _REQUIRED:
        if key not in rec:
            raise SchemaError(f"problem {pid}: missing field {key!r}", pid, key)
    choices = rec["choices"]
    if not isinstance(choices, list) or len(choices) != 4 or not all(
            isinstance(c, (int, float)) for c in choices):
        raise SchemaError(f"problem {pid}: 'choices' must be a list of 4 numbers", pid, "choices")
    program = rec["program"]
    if isinstance(program, str):
        program = program.split()
    if not isinstance(program, list):
        raise SchemaError(f"problem {pid}: 'program' must be a token list", pid, "program")
    path = Path(base_dir) / rec["diagram_path"]
    try:
        img = read_png(path)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"problem {pid}: cannot read diagram {path}: {exc}", pid,
                          "diagram_path") from exc
    tokens, table = substitute_numbers(rec["text"])
    prob = Problem(
        id=pid,
        text_tokens=tokens,
        number_table=table,
        diagram=resize_image(img, image_size),
        choices=[float(c) for c in choices],
        gold_program=[str(t) for t in program],
        type_tag=rec["type"],
        text=rec["text"],
    )
    prob.validate(image_size)
    if "answer" in rec:
        prob.answer_index = int(rec["answer"])
    else:
        prob.answer_index = gold_answer_index(prob)
    return prob


def load_corpus(path, image_size: int = IMAGE_SIZE) -> list[Problem]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise SchemaError(f"{path}: corpus must be a JSON array")
    return [problem_from_record(r, path.parent, image_size) for r in records]


def save_corpus(problems: Sequence[Problem], out_dir, name: str = "corpus.json") -> Path:
    """Write problems as a corpus JSON plus one PNG per diagram."""
    out_dir = Path(out_dir)
    (out_dir / "diagrams").mkdir(parents=True, exist_ok=True)
    records = []
    for p in problems:
        rel = f"diagrams/{p.id}.png"
        write_png(out_dir / rel, p.diagram)
        records.append({
            "id": p.id,
            "text": p.text,
            "diagram_path": rel,
            "choices": list(p.choices),
            "program": list(p.gold_program),
            "type": p.type_tag,
        })
    target = out_dir / name
    target.write_text(json.dumps(records, indent=2, ensure_ascii=False), encoding="utf-8")
    return target


# rasterization (all strokes are 4-connected, one pixel wide)

def _line4(x0, y0, x1, y1) -> list[tuple[int, int]]:
    """Bresenham line with an extra pixel on every diagonal step."""
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
    err = dx + dy
    x, y = x0, y0
    while True:
        pts.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        stepped_x = False
        if e2 >= dy:
            err += dy
            x += sx
            stepped_x = True
        if e2 <= dx:
            if stepped_x:
                pts.append((x, y))
            err += dx
            y += sy
    return pts


def _midpoint_circle(cx, cy, r) -> list[tuple[int, int]]:
    pts = set()
    x, y, d = 0, r, 1 - r
    while x <= y:
        for px, py in ((x, y), (y, x), (-x, y), (-y, x), (x, -y), (y, -x), (-x, -y), (-y, -x)):
            pts.add((cx + px, cy + py))
        if d < 0:
            d += 2 * x + 3
        else:
            d += 2 * (x - y) + 5
            y -= 1
        x += 1
    return sorted(pts, key=lambda p: math.atan2(p[1] - cy, p[0] - cx))


def _connect(points, closed) -> list[tuple[int, int]]:
    out = []
    pairs = list(zip(points, points[1:]))
    if closed:
        pairs.append((points[-1], points[0]))
    for (x0, y0), (x1, y1) in pairs:
        out.extend(_line4(x0, y0, x1, y1))
    return out


def _arc_pixels(cx, cy, r, start, end):
    span = (end - start) % 360 or 360

    def offset(p):
        return (math.degrees(math.atan2(p[1] - cy, p[0] - cx)) - start) % 360

    sel = sorted((p for p in _midpoint_circle(cx, cy, r) if offset(p) <= span), key=offset)
    return _connect(sel, closed=False) if len(sel) > 1 else sel


def _plot(img, pts):
    h, w = img.shape
    for x, y in pts:
        if 0 <= x < w and 0 <= y < h:
            img[y, x] = 0


@dataclass
class DiagramSpec:
    """Everything needed to render one synthetic problem.

    ``primitives`` entries are dicts with ``type`` in {segment, circle, arc};
    ``characters`` entries are ``{"letter": "A", "anchor": [x, y]}`` where the
    anchor is the glyph's top-left pixel.
    """

    primitives: list
    characters: list
    text: str = ""
    program: list = field(default_factory=list)
    type_tag: str = "Length"
    id: str = "synthetic"
    size: int = IMAGE_SIZE
    glyph_scale: int = 2

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "DiagramSpec":
        return cls(**json.loads(text))


def _render_primitives(spec: DiagramSpec) -> np.ndarray:
    img = np.full((spec.size, spec.size), 255, dtype=np.uint8)
    for prim in spec.primitives:
        kind = prim["type"]
        if kind == "segment":
            (x0, y0), (x1, y1) = prim["p0"], prim["p1"]
            _plot(img, _line4(int(x0), int(y0), int(x1), int(y1)))
        elif kind == "circle":
            cx, cy = prim["center"]
            _plot(img, _connect(_midpoint_circle(int(cx), int(cy), int(prim["radius"])), closed=True))
        elif kind == "arc":
            cx, cy = prim["center"]
            _plot(img, _arc_pixels(int(cx), int(cy), int(prim["radius"]), prim["start"], prim["end"]))
        else:
            raise GenerationError(f"unknown primitive type {kind!r}")
    return img


def _choices_for(answer: float, rng: np.random.Generator) -> tuple[list, int]:
    base = round(answer, 6)
    offsets = rng.choice([0.5, 0.6, 0.75, 1.25, 1.5, 1.75, 2.0], size=3, replace=False)
    values = [base] + [round(base * float(o), 6) if base != 0 else float(o) for o in offsets]
    order = rng.permutation(4)
    choices = [values[i] for i in order]
    return choices, int(np.argmax(order == 0))


def render_synthetic(spec: DiagramSpec, seed: int = 0, margin: int = 2,
                     max_tries: int = 20):
    """Rasterize ``spec`` and build the matching Problem.

    Returns ``(image, boxes, problem)`` where ``boxes`` are the inclusive
    ``(x0, y0, x1, y1)`` ink extents of each placed glyph. A glyph whose box
    (plus ``margin``) would touch existing ink is jittered; after ``max_tries``
    failed placements a GenerationError is raised.
    """
    rng = np.random.default_rng(seed)
    img = _render_primitives(spec)
    gw, gh = GLYPH_W * spec.glyph_scale, GLYPH_H * spec.glyph_scale
    boxes = []
    for ch in spec.characters:
        x, y = (int(v) for v in ch["anchor"])
        for attempt in range(max_tries + 1):
            if attempt:
                x = int(ch["anchor"][0]) + int(rng.integers(-12, 13))
                y = int(ch["anchor"][1]) + int(rng.integers(-12, 13))
            x0, y0, x1, y1 = x - margin, y - margin, x + gw - 1 + margin, y + gh - 1 + margin
            if x0 < 0 or y0 < 0 or x1 >= spec.size or y1 >= spec.size:
                continue
            if (img[y0:y1 + 1, x0:x1 + 1] < 128).any():
                continue
            break
        else:
            raise GenerationError(f"could not place glyph {ch['letter']!r} without overlap")
        bitmap = scaled_glyph(ch["letter"], spec.glyph_scale)
        img[y:y + gh, x:x + gw][bitmap] = 0
        ys, xs = np.nonzero(bitmap)
        boxes.append((x + int(xs.min()), y + int(ys.min()), x + int(xs.max()), y + int(ys.max())))

    tokens, table = substitute_numbers(spec.text)
    problem = Problem(
        id=spec.id,
        text_tokens=tokens,
        number_table=table,
        diagram=img,
        choices=[0.0] * 4,
        gold_program=list(spec.program),
        type_tag=spec.type_tag,
        text=spec.text,
    )
    if spec.program:
        result = executor.execute(problem.gold_program, table)
        if not result.ok:
            raise GenerationError(f"{spec.id}: gold program fails: {result.reason}")
        problem.choices, problem.answer_index = _choices_for(result.value, rng)
    return img, boxes, problem


# templated synthetic problems

def _letters(rng, k):
    return [chr(ord("A") + int(i)) for i in rng.choice(26, size=k, replace=False)]


def _label_anchor(vertex, centroid, dist=14, scale=2):
    vx, vy = vertex
    dx, dy = vx - centroid[0], vy - centroid[1]
    norm = math.hypot(dx, dy) or 1.0
    cx, cy = vx + dist * dx / norm, vy + dist * dy / norm
    return [int(round(cx - GLYPH_W * scale / 2)), int(round(cy - GLYPH_H * scale / 2))]


def _triangle(rng, right: bool):
    """Three integer vertices; the last one carries the right angle when ``right``."""
    while True:
        if right:
            cx, cy = int(rng.integers(50, 110)), int(rng.integers(120, 175))
            a, b = int(rng.integers(60, 110)), int(rng.integers(60, 110))
            sx, sy = (1 if rng.random() < 0.5 else -1), -1
            if sx < 0:
                cx += 100
            pts = [(cx, cy + sy * a), (cx + sx * b, cy), (cx, cy)]
        else:
            pts = [(int(rng.integers(30, 194)), int(rng.integers(30, 194))) for _ in range(3)]
        sides = [math.dist(pts[i], pts[(i + 1) % 3]) for i in range(3)]
        area = abs((pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1])
                   - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1])) / 2
        if min(sides) >= 60 and area >= 2500 and all(30 <= c <= 194 for p in pts for c in p):
            return pts


def _triangle_spec(rng, pts, names):
    centroid = (sum(p[0] for p in pts) / 3, sum(p[1] for p in pts) / 3)
    prims = [{"type": "segment", "p0": list(pts[i]), "p1": list(pts[(i + 1) % 3])} for i in range(3)]
    chars = [{"letter": n, "anchor": _label_anchor(p, centroid)} for n, p in zip(names, pts)]
    return prims, chars


def _pick(rng, options):
    return options[int(rng.integers(len(options)))]


def _tpl_right_hyp(rng):
    a, b, c = _letters(rng, 3)
    legs = _pick(rng, [(3, 4), (5, 12), (6, 8), (8, 15), (9, 12), (7, 24)])
    prims, chars = _triangle_spec(rng, _triangle(rng, True), [a, b, c])
    text = (f"In right triangle {a}{b}{c}, ∠{c} = 90°, {a}{c} = {legs[0]}, "
            f"{b}{c} = {legs[1]}. Find the length of {a}{b}.")
    return prims, chars, text, ["gougu_plus", "N_1", "N_2"], "Length"


def _tpl_right_leg(rng):
    a, b, c = _letters(rng, 3)
    hyp, leg = _pick(rng, [(5, 3), (13, 5), (10, 6), (17, 8), (25, 7), (15, 9)])
    prims, chars = _triangle_spec(rng, _triangle(rng, True), [a, b, c])
    text = (f"In right triangle {a}{b}{c}, ∠{c} = 90°, {a}{b} = {hyp}, "
            f"{a}{c} = {leg}. Find the length of {b}{c}.")
    return prims, chars, text, ["gougu_minus", "N_1", "N_2"], "Length"


def _tpl_angle_sum(rng):
    a, b, c = _letters(rng, 3)
    x, y = int(rng.integers(3, 9)) * 10, int(rng.integers(2, 8)) * 10
    prims, chars = _triangle_spec(rng, _triangle(rng, False), [a, b, c])
    text = f"In triangle {a}{b}{c}, ∠{a} = {x}°, ∠{b} = {y}°. Find the degree of ∠{c}."
    return prims, chars, text, ["g_minus", "C_180", "N_0", "g_minus", "V_0", "N_1"], "Angle"


def _circle_parts(rng):
    o, p = _letters(rng, 2)
    cx, cy = int(rng.integers(80, 145)), int(rng.integers(80, 145))
    r = int(rng.integers(40, 60))
    ang = float(rng.uniform(0, 2 * math.pi))
    px, py = int(round(cx + r * math.cos(ang))), int(round(cy + r * math.sin(ang)))
    prims = [{"type": "circle", "center": [cx, cy], "radius": r},
             {"type": "segment", "p0": [cx, cy], "p1": [px, py]}]
    back = ang + math.pi
    chars = [{"letter": o, "anchor": [int(cx + 12 * math.cos(back)) - 5, int(cy + 12 * math.sin(back)) - 7]},
             {"letter": p, "anchor": _label_anchor((px, py), (cx, cy))}]
    return o, p, prims, chars


def _tpl_circle_area(rng):
    o, p, prims, chars = _circle_parts(rng)
    r = int(rng.integers(2, 10))
    text = f"The radius {o}{p} of circle {o} is {r}. Find the area of circle {o}."
    return prims, chars, text, ["circle_area", "N_0"], "Other"


def _tpl_circle_perimeter(rng):
    o, p, prims, chars = _circle_parts(rng)
    r = int(rng.integers(2, 10))
    text = f"The radius {o}{p} of circle {o} is {r}. Find the circumference of circle {o}."
    return prims, chars, text, ["circle_perimeter", "N_0"], "Other"


def _collinear(rng, names, fractions):
    x0, y = int(rng.integers(20, 50)), int(rng.integers(60, 170))
    length = int(rng.integers(130, 180))
    xs = [x0 + int(round(f * length)) for f in fractions]
    prims = [{"type": "segment", "p0": [xs[0], y], "p1": [xs[-1], y]}]
    chars = [{"letter": n, "anchor": [x - 5, y + 8 if i % 2 else y - 22]} for i, (n, x) in enumerate(zip(names, xs))]
    return prims, chars


def _tpl_midpoint(rng):
    a, b, m = _letters(rng, 3)
    length = int(rng.integers(2, 20)) * 2
    prims, chars = _collinear(rng, [a, m, b], [0.0, 0.5, 1.0])
    text = f"Point {m} is the midpoint of segment {a}{b}, {a}{b} = {length}. Find the length of {a}{m}."
    return prims, chars, text, ["g_half", "N_0"], "Length"


def _tpl_segment_diff(rng):
    a, c, b = _letters(rng, 3)
    total = int(rng.integers(10, 30))
    part = int(rng.integers(2, total - 2))
    frac = float(1 - part / total)
    frac = min(max(frac, 0.25), 0.75)
    prims, chars = _collinear(rng, [a, c, b], [0.0, frac, 1.0])
    text = f"Point {c} lies on segment {a}{b}, {a}{b} = {total}, {c}{b} = {part}. Find the length of {a}{c}."
    return prims, chars, text, ["g_minus", "N_0", "N_1"], "Length"


def _tpl_sine_side(rng):
    a, b, c = _letters(rng, 3)
    angle = _pick(rng, [30, 45, 60])
    hyp = int(rng.integers(4, 20))
    prims, chars = _triangle_spec(rng, _triangle(rng, True), [a, b, c])
    text = (f"In right triangle {a}{b}{c}, ∠{c} = 90°, ∠{a} = {angle}°, "
            f"{a}{b} = {hyp}. Find the length of {b}{c}.")
    return prims, chars, text, ["g_sin", "N_1", "g_mul", "V_0", "N_2"], "Length"


TEMPLATES = {
    "right_hypotenuse": _tpl_right_hyp,
    "right_leg": _tpl_right_leg,
    "angle_sum": _tpl_angle_sum,
    "circle_area": _tpl_circle_area,
    "circle_perimeter": _tpl_circle_perimeter,
    "midpoint": _tpl_midpoint,
    "segment_difference": _tpl_segment_diff,
    "sine_side": _tpl_sine_side,
}


def random_spec(template: str, rng: np.random.Generator, problem_id: str = "synthetic") -> DiagramSpec:
    prims, chars, text, program, type_tag = TEMPLATES[template](rng)
    return DiagramSpec(primitives=prims, characters=chars, text=text, program=program,
                       type_tag=type_tag, id=problem_id)


def synthetic_corpus(n: int, seed: int = 0, templates: Sequence[str] | None = None):
    """``n`` rendered problems cycling through the templates.

    Returns a list of ``(problem, boxes)`` pairs; generation is deterministic
    in ``seed``.
    """
    names = list(templates or TEMPLATES)
    rng = np.random.default_rng(seed)
    out = []
    i = 0
    while len(out) < n:
        name = names[len(out) % len(names)]
        spec = random_spec(name, rng, problem_id=f"syn{seed}_{len(out):04d}")
        try:
            _, boxes, prob = render_synthetic(spec, seed=int(rng.integers(2**31)))
        except GenerationError:
            i += 1
            if i > 50 * n:
                raise
            continue
        out.append((prob, boxes))
    return out
