"""5×7 uppercase bitmap font used by the synthetic diagram renderer.

Every glyph is a single 4-connected blob (diagonal strokes are drawn as
staircases) so that a 4-connected component labeler recovers each letter as
one cut-out.
"""

import numpy as np

_FONT = {
    "A": ["#####", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "B": ["####.", "#...#", "#...#", "#####", "#...#", "#...#", "#####"],
    "C": ["#####", "#....", "#....", "#....", "#....", "#....", "#####"],
    "D": ["####.", "#..##", "#...#", "#...#", "#...#", "#..##", "####."],
    "E": ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    "F": ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
    "G": ["#####", "#....", "#....", "#.###", "#...#", "#...#", "#####"],
    "H": ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "I": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"],
    "J": ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", "####."],
    "K": ["#...#", "#..##", "#.##.", "###..", "#.##.", "#..##", "#...#"],
    "L": ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
    "M": ["#...#", "##.##", "#####", "#.#.#", "#...#", "#...#", "#...#"],
    "N": ["#...#", "##..#", "###.#", "#.###", "#..##", "#...#", "#...#"],
    "O": ["#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"],
    "P": ["####.", "#...#", "#...#", "#####", "#....", "#....", "#...."],
    "Q": ["#####", "#...#", "#...#", "#...#", "#.#.#", "#.###", "#####"],
    "R": ["####.", "#...#", "#...#", "#####", "#.##.", "#..##", "#...#"],
    "S": ["#####", "#....", "#....", "#####", "....#", "....#", "#####"],
    "T": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "U": ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"],
    "V": ["#...#", "#...#", "#...#", "##.##", ".#.#.", ".###.", "..#.."],
    "W": ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#####", ".#.#."],
    "X": ["#...#", "##.##", ".###.", "..#..", ".###.", "##.##", "#...#"],
    "Y": ["#...#", "##.##", ".###.", "..#..", "..#..", "..#..", "..#.."],
    "Z": ["#####", "...##", "..##.", ".##..", "##...", "#....", "#####"],
}

GLYPH_W, GLYPH_H = 5, 7
LETTERS = "".join(sorted(_FONT))


def glyph(letter: str) -> np.ndarray:
    """Boolean 7×5 bitmap for an uppercase letter."""
    rows = _FONT[letter.upper()]
    return np.array([[c == "#" for c in row] for row in rows], dtype=bool)


def scaled_glyph(letter: str, scale: int = 2) -> np.ndarray:
    return np.kron(glyph(letter), np.ones((scale, scale), dtype=bool))
