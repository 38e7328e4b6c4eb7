"""RLE mask payloads and the tagged response grammar.

RLE payload grammar (row-major per-pixel labels)::

    payload := run ("," run)*
    run     := count "x" value
    count   := [1-9][0-9]*
    value   := "0" | [1-9][0-9]*

Response grammar: prose interleaved with

    <ref>NAME</ref>            category name, raw (may be "<FG>", " streetlight", ...)
    <mask>PAYLOAD</mask>
    <box><x_N><y_N><x_N><y_N></box>
    <ins><poly><x_N><y_N>...</poly>...</ins>
    <depth>

Any other angle-bracket text is prose.  Whitespace between coordinate tokens
is allowed and preserved for byte-exact re-emission.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from .densemap import DenseMap
from .errors import DenseNTPError


class CodecError(DenseNTPError, ValueError):
    pass


class ParseError(CodecError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class LengthMismatch(CodecError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"RLE covers {got} pixels, expected {expected}")
        self.expected = expected
        self.got = got


class UnbalancedTag(CodecError):
    def __init__(self, tag: str, offset: int):
        super().__init__(f"unbalanced <{tag}> at byte {offset}")
        self.tag = tag
        self.offset = offset


class CoordinateParity(CodecError):
    def __init__(self, tag: str, offset: int):
        super().__init__(f"odd number of coordinates in <{tag}> at byte {offset}")
        self.tag = tag
        self.offset = offset


class InvalidMessage(CodecError):
    pass


# -- RLE ---------------------------------------------------------------------


@dataclass(frozen=True)
class RleMask:
    runs: Tuple[Tuple[int, int], ...]  # (count, value)
    total: int

    @property
    def payload(self) -> str:
        return ",".join(f"{c}x{v}" for c, v in self.runs)

    def to_array(self) -> np.ndarray:
        counts = np.array([c for c, _ in self.runs], dtype=np.int64)
        values = np.array([v for _, v in self.runs], dtype=np.int64)
        return np.repeat(values, counts)


def rle_encode(values) -> RleMask:
    """Run-length encode a DenseMap (or 2-D array) in row-major order."""
    arr = values.values if isinstance(values, DenseMap) else np.asarray(values)
    flat = arr.ravel()
    if flat.size == 0:
        raise CodecError("cannot encode an empty map")
    starts = np.concatenate(([0], np.flatnonzero(flat[1:] != flat[:-1]) + 1))
    counts = np.diff(np.concatenate((starts, [flat.size])))
    runs = tuple((int(c), int(flat[s])) for c, s in zip(counts, starts))
    return RleMask(runs, int(flat.size))


_RUN = re.compile(r"([1-9][0-9]*)x(0|[1-9][0-9]*)")


def parse_rle(payload: str) -> RleMask:
    runs = []
    pos = 0
    n = len(payload)
    while True:
        m = _RUN.match(payload, pos)
        if m is None:
            raise ParseError(f"malformed RLE run {payload[pos:pos + 12]!r}", pos)
        runs.append((int(m.group(1)), int(m.group(2))))
        pos = m.end()
        if pos == n:
            break
        if payload[pos] != ",":
            raise ParseError(f"expected ',' got {payload[pos]!r}", pos)
        pos += 1
    return RleMask(tuple(runs), sum(c for c, _ in runs))


def rle_decode(payload: str, width: int, height: int, ignore_value: int = 255, kind: str = "semantic") -> DenseMap:
    rle = parse_rle(payload)
    if rle.total != width * height:
        raise LengthMismatch(width * height, rle.total)
    return DenseMap(rle.to_array().reshape(height, width), ignore_value=ignore_value, kind=kind)


def is_canonical(rle: RleMask) -> bool:
    return all(a[1] != b[1] for a, b in zip(rle.runs, rle.runs[1:]))


# -- tagged messages ------------------------------------------------------------


@dataclass(frozen=True)
class Ref:
    name: str
    raw: Optional[str] = field(default=None, compare=False)

    def render(self) -> str:
        return self.raw if self.raw is not None else f"<ref>{self.name}</ref>"


@dataclass(frozen=True)
class Mask:
    payload: str
    raw: Optional[str] = field(default=None, compare=False)

    def render(self) -> str:
        return self.raw if self.raw is not None else f"<mask>{self.payload}</mask>"


def _coords(points) -> str:
    return "".join(f"<x_{x}><y_{y}>" for x, y in points)


@dataclass(frozen=True)
class Box:
    coords: Tuple[int, int, int, int]
    raw: Optional[str] = field(default=None, compare=False)

    def render(self) -> str:
        if self.raw is not None:
            return self.raw
        x0, y0, x1, y1 = self.coords
        return f"<box>{_coords([(x0, y0), (x1, y1)])}</box>"


@dataclass(frozen=True)
class Instance:
    polys: Tuple[Tuple[Tuple[int, int], ...], ...]
    raw: Optional[str] = field(default=None, compare=False)

    def render(self) -> str:
        if self.raw is not None:
            return self.raw
        return "<ins>" + "".join(f"<poly>{_coords(p)}</poly>" for p in self.polys) + "</ins>"


@dataclass(frozen=True)
class DepthMarker:
    def render(self) -> str:
        return "<depth>"


Part = Union[str, Ref, Mask, Box, Instance, DepthMarker]


@dataclass
class TagMessage:
    """An ordered sequence of prose strings and tags."""

    parts: List[Part] = field(default_factory=list)

    @property
    def refs(self) -> List[str]:
        return [p.name for p in self.parts if isinstance(p, Ref)]

    @property
    def mask_rle(self) -> Optional[str]:
        for p in self.parts:
            if isinstance(p, Mask):
                return p.payload
        return None

    @property
    def boxes(self) -> List[Tuple[int, int, int, int]]:
        return [p.coords for p in self.parts if isinstance(p, Box)]

    @property
    def polys(self) -> List[List[List[Tuple[int, int]]]]:
        return [[list(poly) for poly in p.polys] for p in self.parts if isinstance(p, Instance)]

    @property
    def depth_flag(self) -> bool:
        return any(isinstance(p, DepthMarker) for p in self.parts)

    @property
    def free_text(self) -> str:
        return "".join(p for p in self.parts if isinstance(p, str))

    def fields(self) -> dict:
        return {
            "refs": self.refs,
            "mask_rle": self.mask_rle,
            "boxes": self.boxes,
            "polys": self.polys,
            "depth_flag": self.depth_flag,
            "free_text": self.free_text,
        }

    def __eq__(self, other):
        if not isinstance(other, TagMessage):
            return NotImplemented
        return _normalize(self.parts) == _normalize(other.parts)

    @classmethod
    def from_fields(
        cls,
        refs=(),
        mask_rle: Optional[str] = None,
        boxes=(),
        polys=(),
        depth_flag: bool = False,
        free_text: str = "",
    ) -> "TagMessage":
        """Canonical layout: prose, refs, depth marker, boxes, instances, mask."""
        parts: List[Part] = []
        if free_text:
            parts.append(free_text)
        parts += [Ref(r) for r in refs]
        if depth_flag:
            parts.append(DepthMarker())
        parts += [Box(tuple(b)) for b in boxes]
        parts += [Instance(tuple(tuple(tuple(pt) for pt in poly) for poly in ins)) for ins in polys]
        if mask_rle is not None:
            parts.append(Mask(mask_rle))
        return cls(parts)


def _normalize(parts):
    """Merge adjacent prose and drop empty prose so equal messages compare equal."""
    out = []
    for p in parts:
        if isinstance(p, str):
            if not p:
                continue
            if out and isinstance(out[-1], str):
                out[-1] += p
                continue
        out.append(p)
    return out


def segmentation_message(refs, payload: str, background: bool = False) -> TagMessage:
    """The semantic-segmentation answer: refs numbered from 0, then the mask."""
    tail = ", numbered sequentially starting from 0"
    tail += "." if background else ", without the background class."
    return TagMessage(["The target categories include "] + [Ref(r) for r in refs] + [tail, Mask(payload)])


def fg_bg_message(payload: str) -> TagMessage:
    """The referring-segmentation answer with label 0 = <BG>, 1 = <FG>."""
    return TagMessage(["The results are 0 for ", Ref("<BG>"), " and 1 for ", Ref("<FG>"), ".", Mask(payload)])


def depth_message(payload: str) -> TagMessage:
    return TagMessage(["This is the ", DepthMarker(), ".", Mask(payload)])


# -- parser -----------------------------------------------------------------------

_OPEN = re.compile(r"<(ref|mask|box|ins|depth)>")
_STRAY_CLOSE = re.compile(r"</(ref|mask|box|ins|poly)>")
_COORD = re.compile(r"<([xy])_(0|[1-9][0-9]*)>")
_WS = re.compile(r"\s*")


def _parse_coords(body: str, base: int, tag: str) -> List[Tuple[int, int]]:
    vals = []
    pos = _WS.match(body, 0).end()
    while pos < len(body):
        m = _COORD.match(body, pos)
        if m is None:
            raise ParseError(f"unexpected text inside <{tag}>", base + pos)
        axis = "x" if len(vals) % 2 == 0 else "y"
        if m.group(1) != axis:
            raise ParseError(f"expected <{axis}_N> inside <{tag}>", base + pos)
        vals.append(int(m.group(2)))
        pos = _WS.match(body, m.end()).end()
    if len(vals) % 2:
        raise CoordinateParity(tag, base)
    return list(zip(vals[::2], vals[1::2]))


def _parse_ins(body: str, base: int) -> Tuple[Tuple[Tuple[int, int], ...], ...]:
    polys = []
    pos = _WS.match(body, 0).end()
    while pos < len(body):
        if not body.startswith("<poly>", pos):
            raise ParseError("only <poly> blocks may appear inside <ins>", base + pos)
        end = body.find("</poly>", pos + 6)
        if end < 0:
            raise UnbalancedTag("poly", base + pos)
        pts = _parse_coords(body[pos + 6 : end], base + pos + 6, "poly")
        polys.append(tuple(pts))
        pos = _WS.match(body, end + 7).end()
    return tuple(polys)


def parse_message(text: str) -> TagMessage:
    """Single left-to-right pass; every byte of ``text`` lands in exactly one part."""
    parts: List[Part] = []
    prose_start = 0
    pos = 0
    n = len(text)
    while pos < n:
        lt = text.find("<", pos)
        if lt < 0:
            break
        m = _OPEN.match(text, lt)
        if m is None:
            c = _STRAY_CLOSE.match(text, lt)
            if c is not None:
                raise UnbalancedTag(c.group(1), lt)
            pos = lt + 1
            continue
        if lt > prose_start:
            parts.append(text[prose_start:lt])
        tag = m.group(1)
        if tag == "depth":
            parts.append(DepthMarker())
            pos = prose_start = m.end()
            continue
        close = f"</{tag}>"
        end = text.find(close, m.end())
        if end < 0:
            raise UnbalancedTag(tag, lt)
        body = text[m.end() : end]
        raw = text[lt : end + len(close)]
        if tag == "ref":
            parts.append(Ref(body, raw))
        elif tag == "mask":
            parts.append(Mask(body, raw))
        elif tag == "box":
            pts = _parse_coords(body, m.end(), "box")
            if len(pts) != 2:
                raise ParseError(f"<box> needs exactly two coordinate pairs, got {len(pts)}", lt)
            parts.append(Box((pts[0][0], pts[0][1], pts[1][0], pts[1][1]), raw))
        else:
            parts.append(Instance(_parse_ins(body, m.end()), raw))
        pos = prose_start = end + len(close)
    if prose_start < n:
        parts.append(text[prose_start:])
    return TagMessage(parts)


def _check_part(p: Part) -> None:
    if isinstance(p, str):
        if _OPEN.search(p) or _STRAY_CLOSE.search(p):
            raise InvalidMessage(f"prose {p!r} contains a reserved tag")
    elif isinstance(p, Ref):
        if "</ref>" in p.name:
            raise InvalidMessage("ref name contains </ref>")
    elif isinstance(p, Mask):
        if "</mask>" in p.payload:
            raise InvalidMessage("mask payload contains </mask>")
    elif isinstance(p, Box):
        if len(p.coords) != 4 or any(int(c) != c or c < 0 for c in p.coords):
            raise InvalidMessage(f"box needs 4 non-negative integers, got {p.coords}")
    elif isinstance(p, Instance):
        for poly in p.polys:
            for pt in poly:
                if len(pt) != 2 or any(int(c) != c or c < 0 for c in pt):
                    raise InvalidMessage(f"bad polygon point {pt}")
    elif not isinstance(p, DepthMarker):
        raise InvalidMessage(f"unknown message part {p!r}")


def emit_message(msg: TagMessage) -> str:
    for p in msg.parts:
        _check_part(p)
    return "".join(p if isinstance(p, str) else p.render() for p in msg.parts)
