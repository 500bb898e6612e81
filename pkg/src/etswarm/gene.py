"""Bitmap to gene compilation on the skewed triangular lattice.

A tag ``(x, y)`` is a ``(row, column)`` offset from the origin cell.  Rows
grow downward and each row sits half a cell left of the row below it, so
the six lattice neighbours of ``(x, y)`` are the cells at
:data:`NEIGHBOR_OFFSETS`.  That order is canonical and is reused for slot
enumeration, boundary tracing and scaling scans.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

Tag = tuple[int, int]

NEIGHBOR_OFFSETS: tuple[Tag, ...] = ((-1, 0), (-1, 1), (0, 1), (1, 0), (1, -1), (0, -1))
SQRT3_2 = math.sqrt(3.0) / 2.0


class GeneError(ValueError):
    """Base class for bitmap and gene errors."""


class ParseError(GeneError):
    pass


class NoShapeError(GeneError):
    pass


class DisconnectedShapeError(GeneError):
    pass


class TooFewRobotsError(GeneError):
    pass


class CannotScaleError(GeneError):
    pass


class OpenBoundaryError(GeneError):
    pass


@dataclass(frozen=True)
class Bitmap:
    rows: int
    cols: int
    bits: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ParseError("bitmap must have at least one row and column")
        if len(self.bits) != self.rows or any(len(r) != self.cols for r in self.bits):
            raise ParseError("bitmap rows do not match declared shape")
        if any(b not in (0, 1) for r in self.bits for b in r):
            raise ParseError("bitmap cells must be 0 or 1")

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable[int]]) -> "Bitmap":
        bits = tuple(tuple(int(b) for b in r) for r in rows)
        if not bits:
            raise ParseError("empty bitmap")
        return cls(len(bits), len(bits[0]), bits)

    def ones(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols) if self.bits[r][c]]

    def count_ones(self) -> int:
        return sum(map(sum, self.bits))


class GeneEntry(NamedTuple):
    tag: Tag
    flag: int
    nn: int


class LatticePoint(NamedTuple):
    px: float
    py: float


@dataclass(frozen=True, eq=True)
class Gene:
    """Table of ``(tag, flag, nn)`` entries plus the origin and population.

    Lookups outside the stored cells return flag 0 and nn 0, since searching
    robots routinely probe tags beyond the bitmap.
    """

    entries: Mapping[Tag, GeneEntry]
    origin: Tag
    total_ones: int

    __hash__ = None  # type: ignore[assignment]

    def lookup(self, tag: Tag) -> GeneEntry:
        entry = self.entries.get(tag)
        if entry is None:
            return GeneEntry(tag, 0, 0)
        return entry

    def flag(self, tag: Tag) -> int:
        entry = self.entries.get(tag)
        return entry.flag if entry is not None else 0

    def nn(self, tag: Tag) -> int:
        entry = self.entries.get(tag)
        return entry.nn if entry is not None else 0

    def ones(self) -> list[Tag]:
        return sorted(t for t, e in self.entries.items() if e.flag)

    def bounds(self) -> tuple[int, int, int, int]:
        """``(xmin, xmax, ymin, ymax)`` over every stored entry."""
        xs = [t[0] for t in self.entries]
        ys = [t[1] for t in self.entries]
        return min(xs), max(xs), min(ys), max(ys)


_TOKEN_SPLIT = re.compile(r"\s+")


def parse_bitmap(source: str) -> Bitmap:
    """Parse a plain-text 0/1 grid.

    Accepts an optional ``P1`` header (in which case a ``width height`` line
    follows and the data may wrap freely, as in plain PBM), ``#`` comments,
    and rows written either with whitespace between cells or contiguously.
    """
    lines = []
    for raw in source.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines:
        raise ParseError("empty input")

    if lines[0].upper().startswith("P1"):
        rest = lines[0][2:].split()
        tokens = rest + [tok for line in lines[1:] for tok in _TOKEN_SPLIT.split(line)]
        if len(tokens) < 2:
            raise ParseError("P1 header without dimensions")
        try:
            width, height = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise ParseError(f"bad P1 dimensions: {tokens[:2]}") from None
        cells: list[str] = []
        for tok in tokens[2:]:
            cells.extend(tok)  # plain PBM permits "0110" runs
        if width < 1 or height < 1 or len(cells) != width * height:
            raise ParseError(f"P1 data has {len(cells)} cells, expected {width}x{height}")
        grid = [cells[r * width:(r + 1) * width] for r in range(height)]
    else:
        grid = []
        for line in lines:
            grid.append(_TOKEN_SPLIT.split(line) if _TOKEN_SPLIT.search(line) else list(line))

    for row in grid:
        for tok in row:
            if tok not in ("0", "1"):
                raise ParseError(f"non-binary token {tok!r}")
    widths = {len(r) for r in grid}
    if len(widths) != 1:
        raise ParseError(f"ragged rows: widths {sorted(widths)}")
    return Bitmap.from_rows([[int(t) for t in row] for row in grid])


def neighbor_tags(t: Tag) -> list[Tag]:
    x, y = t
    return [(x + dx, y + dy) for dx, dy in NEIGHBOR_OFFSETS]


def lattice_distance(a: Tag, b: Tag) -> int:
    """Hop count between two tags on the six-neighbour lattice."""
    dx, dy = a[0] - b[0], a[1] - b[1]
    return max(abs(dx), abs(dy), abs(dx + dy))


def are_adjacent(a: Tag, b: Tag) -> bool:
    return lattice_distance(a, b) == 1


def embed(t: Tag, d: float = 1.0) -> LatticePoint:
    x, y = t
    return LatticePoint(d * (y + x / 2.0), d * x * SQRT3_2)


def choose_origin(bitmap: Bitmap) -> tuple[int, int]:
    """Grid index of the cell that becomes tag (0, 0).

    The central cell is used when it is set; otherwise the set cell nearest
    to it in lattice hops, ties going to the smaller row then column.
    """
    ones = bitmap.ones()
    if not ones:
        raise NoShapeError("bitmap contains no 1 cells")
    center = (bitmap.rows // 2, bitmap.cols // 2)
    if bitmap.bits[center[0]][center[1]]:
        return center
    return min(ones, key=lambda rc: (lattice_distance(rc, center), rc[0], rc[1]))


def is_connected(cells: Iterable[Tag]) -> bool:
    cells = set(cells)
    if not cells:
        return False
    return len(flood(next(iter(cells)), cells)) == len(cells)


def flood(start: Tag, allowed: set[Tag]) -> set[Tag]:
    seen = {start}
    todo = deque([start])
    while todo:
        cur = todo.popleft()
        for nb in neighbor_tags(cur):
            if nb in allowed and nb not in seen:
                seen.add(nb)
                todo.append(nb)
    return seen


def _gene_from_flags(keys: Iterable[Tag], ones: set[Tag], origin: Tag) -> Gene:
    entries = {}
    for t in sorted(keys):
        nn = sum(1 for nb in neighbor_tags(t) if nb in ones)
        entries[t] = GeneEntry(t, 1 if t in ones else 0, nn)
    return Gene(entries, origin, len(ones))


def compile_gene(bitmap: Bitmap) -> Gene:
    r0, c0 = choose_origin(bitmap)
    keys = [(r - r0, c - c0) for r in range(bitmap.rows) for c in range(bitmap.cols)]
    ones = {(r - r0, c - c0) for r, c in bitmap.ones()}
    if not is_connected(ones):
        raise DisconnectedShapeError("shape cells are not connected on the lattice")
    if len(ones) < 3:
        raise TooFewRobotsError(f"shape needs at least 3 robots, has {len(ones)}")
    return _gene_from_flags(keys, ones, (0, 0))


def gene_from_ones(ones: Iterable[Tag], bounds: tuple[int, int, int, int], origin: Tag) -> Gene:
    """Rebuild a gene from its set cells over the rectangle ``bounds``."""
    xmin, xmax, ymin, ymax = bounds
    keys = [(x, y) for x in range(xmin, xmax + 1) for y in range(ymin, ymax + 1)]
    ones = set(ones)
    stray = [t for t in ones if not (xmin <= t[0] <= xmax and ymin <= t[1] <= ymax)]
    if stray:
        raise GeneError(f"set cells outside bounds: {stray[:3]}")
    return _gene_from_flags(keys, ones, origin)


def translate_gene(gene: Gene, shift: Tag) -> Gene:
    sx, sy = shift
    xmin, xmax, ymin, ymax = gene.bounds()
    ones = {(x + sx, y + sy) for x, y in gene.ones()}
    origin = (gene.origin[0] + sx, gene.origin[1] + sy)
    return gene_from_ones(ones, (xmin + sx, xmax + sx, ymin + sy, ymax + sy), origin)


def triangles(cells: Iterable[Tag]) -> list[tuple[Tag, Tag, Tag]]:
    """Every triangle of three mutually adjacent cells, listed once each
    from its smallest corner."""
    cells = set(cells)
    found = []
    for t in sorted(cells):
        ring = neighbor_tags(t)
        for k in range(6):
            a, b = ring[k], ring[(k + 1) % 6]
            if a in cells and b in cells and t < a and t < b:
                found.append((t, a, b))
    return found


def grown_from(cells: Iterable[Tag], seeds: Iterable[Tag]) -> set[Tag]:
    """Cells reached from ``seeds`` by repeatedly adding a cell beside at
    least two reached ones -- the only way a searching robot can localize."""
    cells = set(cells)
    filled = set(seeds) & cells
    support: dict[Tag, int] = {}
    todo = deque(filled)
    while todo:
        cur = todo.popleft()
        for nb in neighbor_tags(cur):
            if nb in cells and nb not in filled:
                support[nb] = support.get(nb, 0) + 1
                if support[nb] >= 2:
                    filled.add(nb)
                    todo.append(nb)
    return filled


def grows_from(cells: Iterable[Tag], seeds: Iterable[Tag]) -> bool:
    cells = set(cells)
    return grown_from(cells, seeds) == cells


def is_formable(cells: Iterable[Tag]) -> bool:
    """At least three cells, and some seed triangle grows into all of them."""
    cells = set(cells)
    return len(cells) >= 3 and any(grows_from(cells, tri) for tri in triangles(cells))


def generate_scaled_gene(gene: Gene, n: int) -> Gene:
    """Erode boundary cells until at most ``n`` remain.

    Each pass scans the current boundary cells (fewer than six set
    neighbours) in ascending ``(x, y)`` order and deletes those whose removal
    keeps the shape formable: some seed triangle must still grow into every
    cell by repeatedly adding cells beside two filled ones.  That rules out
    disconnected shapes and robots left with fewer than two neighbours.

    An input that is not formable to begin with (a straight line, say) only
    has to stay connected with at least three cells.  When a pass deletes
    nothing, the one deletion that loses the fewest further cells is made
    instead, keeping what some triangle still grows into.
    """
    if n < 3:
        raise CannotScaleError(f"cannot scale to {n} robots; at least 3 are needed")
    ones = set(gene.ones())
    if len(ones) <= n:
        return gene
    if is_formable(ones):
        admissible = is_formable
    else:
        def admissible(cells):
            return len(cells) >= 3 and is_connected(cells)
    while len(ones) > n:
        boundary = sorted(
            t for t in ones if sum(1 for nb in neighbor_tags(t) if nb in ones) < 6
        )
        progress = False
        for t in boundary:
            if len(ones) <= n:
                break
            trial = ones - {t}
            if admissible(trial):
                ones = trial
                progress = True
        if progress:
            continue
        best = None
        for t in sorted(ones):
            rest = ones - {t}
            for tri in triangles(rest):
                trial = grown_from(rest, tri)
                if best is None or len(trial) > len(best):
                    best = trial
        if best is None:
            raise CannotScaleError(f"stuck at {len(ones)} cells, target {n}")
        ones = best
    return _gene_from_flags(gene.entries.keys(), ones, gene.origin)


def trace_boundary(cells: Iterable[Tag]) -> list[Tag]:
    """Outer contour of the connected set containing ``min(cells)``.

    Moore-neighbour tracing adapted to six directions; consecutive tags in
    the result are lattice neighbours and the last one neighbours the first.
    Cells may repeat where the shape is one cell thick.
    """
    cells = set(cells)
    if not cells:
        return []
    start = min(cells)
    cells = flood(start, cells)
    # directions 0, 1 and 5 from the lexicographic minimum are always empty
    back = 0
    cur = start
    first_move = None
    contour = [start]
    while True:
        for i in range(1, 7):
            k = (back + i) % 6
            dx, dy = NEIGHBOR_OFFSETS[k]
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in cells:
                break
        else:
            return contour  # isolated cell
        move = (cur, nxt)
        if first_move is None:
            first_move = move
        elif move == first_move:
            contour.pop()  # drop the repeated start
            return contour
        contour.append(nxt)
        back = (k + 4) % 6
        cur = nxt


def census_from_boundary(gene: Gene, boundary_tags: list[Tag]) -> int:
    """Number of set gene cells on or inside a closed lattice cycle."""
    if not boundary_tags:
        raise OpenBoundaryError("empty boundary")
    n = len(boundary_tags)
    if n > 1:
        for i in range(n):
            a, b = boundary_tags[i], boundary_tags[(i + 1) % n]
            if a != b and not are_adjacent(a, b):
                raise OpenBoundaryError(f"boundary breaks between {a} and {b}")
    return len(enclosed_cells(boundary_tags) & set(gene.ones()))


def enclosed_cells(boundary_tags: Iterable[Tag]) -> set[Tag]:
    """Boundary tags plus every cell the boundary cuts off from the outside."""
    barrier = set(boundary_tags)
    xs = [t[0] for t in barrier]
    ys = [t[1] for t in barrier]
    xmin, xmax, ymin, ymax = min(xs) - 1, max(xs) + 1, min(ys) - 1, max(ys) + 1
    box = {(x, y) for x in range(xmin, xmax + 1) for y in range(ymin, ymax + 1)}
    outside = flood((xmin, ymin), box - barrier)
    return box - outside


def bfs_hops(start: Tag, cells: set[Tag]) -> dict[Tag, int]:
    hops = {start: 0}
    todo = deque([start])
    while todo:
        cur = todo.popleft()
        for nb in neighbor_tags(cur):
            if nb in cells and nb not in hops:
                hops[nb] = hops[cur] + 1
                todo.append(nb)
    return hops


def serialize_gene(gene: Gene) -> str:
    lines = [f"origin {gene.origin[0]} {gene.origin[1]}", f"ones {gene.total_ones}"]
    for t in sorted(gene.entries):
        e = gene.entries[t]
        lines.append(f"{t[0]} {t[1]} {e.flag} {e.nn}")
    return "\n".join(lines) + "\n"
