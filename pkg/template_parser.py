"""
Parser for the <think>/<answer>/<correct> output template.

The template is strict: each section exactly once, in this order, with
nothing but whitespace outside the sections.
"""

import math
import re
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from models import Segment, StructuredOutput

TAG_NAMES = ("think", "answer", "correct")

# Published timestamp grammar: two non-negative decimals joined by "to",
# "-" or ",", each optionally followed by a "seconds"/"s" unit token.
# Group 1 is the start, group 2 the end. Only the first match counts.
TIMESTAMP_GRAMMAR = (
    r"(?<![\d.])(\d+(?:\.\d+)?)(?:\s*(?:seconds|s)\b)?"
    r"\s*(?:to|-|,)\s*"
    r"(\d+(?:\.\d+)?)(?:\s*(?:seconds|s)\b)?"
)
TIMESTAMP_RE = re.compile(TIMESTAMP_GRAMMAR)

_SECTION_RES = {
    name: re.compile(rf"<{name}>(.*?)</{name}>", re.DOTALL) for name in TAG_NAMES
}
_ANY_TAG_RE = re.compile(r"</?(?:think|answer|correct)>")


@dataclass(frozen=True)
class ParseDiagnostics:
    """Why a raw output does or does not follow the template."""
    missing_tags: Tuple[str, ...] = ()
    duplicate_tags: Tuple[str, ...] = ()
    order_violation: bool = False

    @property
    def format_ok(self) -> bool:
        return not self.missing_tags and not self.duplicate_tags and not self.order_violation


def extract_segment(answer_text: str) -> Optional[Segment]:
    """Return the first timestamp pair in the answer, or None (refusal).

    An inverted or overflowing first pair also yields None.
    """
    match = TIMESTAMP_RE.search(answer_text)
    if match is None:
        return None
    start, end = float(match.group(1)), float(match.group(2))
    if not (math.isfinite(start) and math.isfinite(end)) or start > end:
        return None
    return Segment(start, end)


def _locate_sections(raw: str):
    """Find (open_start, open_end, close_start, close_end) per unique tag."""
    missing, duplicate, spans = [], [], {}
    for name in TAG_NAMES:
        open_tag, close_tag = f"<{name}>", f"</{name}>"
        opens, closes = raw.count(open_tag), raw.count(close_tag)
        if opens == 0 or closes == 0:
            missing.append(name)
        elif opens > 1 or closes > 1:
            duplicate.append(name)
        else:
            open_at = raw.index(open_tag)
            close_at = raw.index(close_tag)
            spans[name] = (open_at, open_at + len(open_tag), close_at, close_at + len(close_tag))
    return missing, duplicate, spans


def _order_violated(raw: str, spans: Dict[str, Tuple[int, int, int, int]]) -> bool:
    cursor = 0
    for name in TAG_NAMES:
        if name not in spans:
            continue
        open_start, open_end, close_start, close_end = spans[name]
        if open_start < cursor or close_start < open_end:
            return True
        if raw[cursor:open_start].strip():
            return True
        cursor = close_end
    return bool(raw[cursor:].strip())


def parse_output(raw: str) -> Tuple[Optional[StructuredOutput], ParseDiagnostics]:
    """Parse a raw model output strictly.

    Never raises: failure is signalled by a None output and diagnostics.
    """
    if not isinstance(raw, str):
        raw = str(raw)
    missing, duplicate, spans = _locate_sections(raw)
    diagnostics = ParseDiagnostics(
        missing_tags=tuple(missing),
        duplicate_tags=tuple(duplicate),
        order_violation=_order_violated(raw, spans),
    )
    if not diagnostics.format_ok:
        return None, diagnostics

    sections = {
        name: raw[spans[name][1]:spans[name][2]].strip() for name in TAG_NAMES
    }
    output = StructuredOutput(
        think=sections["think"],
        answer=sections["answer"],
        correct=sections["correct"],
        segment=extract_segment(sections["answer"]),
        raw=raw,
    )
    return output, diagnostics


def extract_sections(raw: str) -> Dict[str, Optional[str]]:
    """Best-effort first occurrence of each section, None when absent."""
    sections: Dict[str, Optional[str]] = {}
    for name, pattern in _SECTION_RES.items():
        match = pattern.search(raw)
        sections[name] = match.group(1).strip() if match else None
    return sections


def parse_lenient(raw: str) -> Optional[StructuredOutput]:
    """Strict parse when possible, else salvage an answer for evaluation.

    Falls back to the first <answer> section, then to the whole text with
    <think> sections and stray tags removed. Returns None only for blank
    input.
    """
    if not raw or not raw.strip():
        return None
    output, _ = parse_output(raw)
    if output is not None:
        return output

    sections = extract_sections(raw)
    answer = sections["answer"]
    if answer is None:
        answer = _ANY_TAG_RE.sub(" ", _SECTION_RES["think"].sub(" ", raw)).strip()
    return StructuredOutput(
        think=sections["think"] or "",
        answer=answer,
        correct=sections["correct"],
        segment=extract_segment(answer),
        raw=raw,
    )


def render_output(output: StructuredOutput) -> str:
    """Emit the canonical three-section template."""
    correct = output.correct if output.correct is not None else ""
    return (
        f"<think>{output.think}</think>\n"
        f"<answer>{output.answer}</answer>\n"
        f"<correct>{correct}</correct>"
    )
