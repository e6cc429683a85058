"""SubRip (.srt) cue parsing and serialization.

Blocks are blank-line separated: an integer index, a
``HH:MM:SS,mmm --> HH:MM:SS,mmm`` line, then one or more text lines.
Tolerant of CRLF line endings and trailing whitespace.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class SrtParseError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class SrtCue:
    index: int
    start_ms: int
    end_ms: int
    lines: list[str]

    @property
    def text(self) -> str:
        return "\n".join(self.lines)


_TS = re.compile(r"^(\d{1,2}):(\d{2}):(\d{2})[,.](\d{3})$")


def _parse_timestamp(token: str, lineno: int) -> int:
    m = _TS.match(token)
    if not m:
        raise SrtParseError(f"malformed timestamp {token!r}", lineno)
    hh, mm, ss, ms = (int(g) for g in m.groups())
    return ((hh * 60 + mm) * 60 + ss) * 1000 + ms


def parse_srt(text: str) -> list[SrtCue]:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    cues: list[SrtCue] = []
    i = 0
    n = len(lines)
    while i < n:
        if not lines[i].strip():
            i += 1
            continue
        idx_line = lines[i].strip().lstrip("﻿")
        if not idx_line.isdigit():
            raise SrtParseError(f"non-numeric cue index {idx_line!r}", i + 1)
        index = int(idx_line)
        i += 1
        if i >= n:
            raise SrtParseError("missing timing line", i + 1)
        timing = lines[i].strip()
        if "-->" not in timing:
            raise SrtParseError(f"missing '-->' in timing line {timing!r}", i + 1)
        left, _, right = timing.partition("-->")
        start_ms = _parse_timestamp(left.strip(), i + 1)
        end_ms = _parse_timestamp(right.strip(), i + 1)
        if start_ms > end_ms:
            raise SrtParseError(f"cue ends before it starts ({timing!r})", i + 1)
        i += 1
        text_lines: list[str] = []
        while i < n and lines[i].strip():
            text_lines.append(lines[i].rstrip())
            i += 1
        if not text_lines:
            raise SrtParseError(f"cue {index} has no text", i + 1)
        cues.append(SrtCue(index, start_ms, end_ms, text_lines))
    return cues


def _fmt_timestamp(ms: int) -> str:
    hh, rem = divmod(ms, 3_600_000)
    mm, rem = divmod(rem, 60_000)
    ss, mmm = divmod(rem, 1000)
    return f"{hh:02d}:{mm:02d}:{ss:02d},{mmm:03d}"


def serialize_srt(cues: list[SrtCue]) -> str:
    blocks = []
    for cue in cues:
        body = "\n".join(cue.lines)
        blocks.append(f"{cue.index}\n{_fmt_timestamp(cue.start_ms)} --> {_fmt_timestamp(cue.end_ms)}\n{body}")
    return "\n\n".join(blocks) + "\n"
