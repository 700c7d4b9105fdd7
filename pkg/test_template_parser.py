"""
Unit tests for the output template parser.
Using pytest framework.
"""

import random

import numpy as np
import pytest

from models import Segment, StructuredOutput
from template_parser import (
    extract_sections,
    extract_segment,
    parse_lenient,
    parse_output,
    render_output,
)


class TestParseOutput:
    """Test cases for strict parsing."""

    def test_well_formed(self):
        """Test the canonical example parses with its segment."""
        output, diagnostics = parse_output(
            "<think>t</think> <answer>4.0 to 8.0</answer> <correct>N/A</correct>"
        )
        assert diagnostics.format_ok
        assert output.think == "t"
        assert output.answer == "4.0 to 8.0"
        assert output.correct == "N/A"
        assert output.segment == Segment(4.0, 8.0)

    def test_missing_tags(self):
        """Test missing sections are reported in template order."""
        output, diagnostics = parse_output("<answer>x</answer>")
        assert output is None
        assert not diagnostics.format_ok
        assert diagnostics.missing_tags == ("think", "correct")

    def test_order_violation(self):
        """Test sections out of order."""
        output, diagnostics = parse_output("<answer>a</answer><think>t</think><correct>c</correct>")
        assert output is None
        assert diagnostics.order_violation is True
        assert diagnostics.missing_tags == ()

    def test_duplicate_answer(self):
        """Test a duplicated section."""
        raw = "<think>t</think><answer>a</answer><answer>b</answer><correct>c</correct>"
        output, diagnostics = parse_output(raw)
        assert output is None
        assert diagnostics.duplicate_tags == ("answer",)

    def test_text_outside_sections(self):
        """Test non-whitespace text between sections breaks the format."""
        _, diagnostics = parse_output("<think>t</think> so <answer>a</answer><correct>c</correct>")
        assert diagnostics.order_violation is True
        _, diagnostics = parse_output("<think>t</think><answer>a</answer><correct>c</correct> bye")
        assert diagnostics.order_violation is True

    def test_nested_close_before_open(self):
        """Test a closing tag placed before its opening tag."""
        _, diagnostics = parse_output("<think></think><answer>a</answer></correct><correct>")
        assert not diagnostics.format_ok

    def test_empty_sections_are_legal(self):
        """Test empty content still follows the template."""
        output, diagnostics = parse_output("<think></think>\n<answer></answer>\n<correct></correct>")
        assert diagnostics.format_ok
        assert output.answer == ""
        assert output.segment is None

    def test_non_text_input(self):
        """Test non-string input is coerced, not raised on."""
        output, diagnostics = parse_output(12345)
        assert output is None
        assert not diagnostics.format_ok


class TestExtractSegment:
    """Test cases for timestamp extraction."""

    @pytest.mark.parametrize("text,expected", [
        ("The segment is 12.5 to 30.0 seconds.", (12.5, 30.0)),
        ("From 4.0 to 8.0 seconds.", (4.0, 8.0)),
        ("4-8", (4.0, 8.0)),
        ("4s - 8s", (4.0, 8.0)),
        ("between 2, 5", (2.0, 5.0)),
        ("0 seconds to 3 seconds", (0.0, 3.0)),
        ("first 1 to 2 then 5 to 9", (1.0, 2.0)),
        ("3.0 to 3.0", (3.0, 3.0)),
    ])
    def test_pairs(self, text, expected):
        """Test timestamp forms accepted by the grammar."""
        assert extract_segment(text) == Segment(*expected)

    @pytest.mark.parametrize("text", [
        "This query is not relevant to the video because the action differs.",
        "9.0 to 3.0",
        "The man appears 3 times.",
        "",
        "9" * 400 + " to " + "9" * 401,
    ])
    def test_no_segment(self, text):
        """Test refusals, inverted and overflowing pairs yield nothing."""
        assert extract_segment(text) is None


class TestRenderOutput:
    """Test cases for canonical rendering."""

    def test_canonical_form(self):
        """Test the canonical three-line form."""
        rendered = render_output(StructuredOutput(think="a", answer="b", correct="c"))
        assert rendered == "<think>a</think>\n<answer>b</answer>\n<correct>c</correct>"

    def test_missing_correct_renders_empty(self):
        """Test a None correct section renders as empty."""
        output, diagnostics = parse_output(render_output(StructuredOutput("a", "b")))
        assert diagnostics.format_ok
        assert output.correct == ""

    def test_round_trip(self):
        """Test render then parse is the identity on the sections."""
        rng = random.Random(3)
        words = ["the", "man", "slices", "bread", "4.5", "to", "9", "seconds", "not", "a", "-", ","]

        def text():
            return " ".join(rng.choice(words) for _ in range(rng.randint(0, 8)))

        for _ in range(1000):
            original = StructuredOutput(think=text(), answer=text(), correct=text())
            parsed, diagnostics = parse_output(render_output(original))
            assert diagnostics.format_ok
            assert (parsed.think, parsed.answer, parsed.correct) == (
                original.think, original.answer, original.correct
            )
            assert parsed.segment == extract_segment(original.answer)


class TestLenientParsing:
    """Test cases for best-effort parsing."""

    def test_strict_output_kept(self):
        """Test a well-formed output parses the same leniently."""
        raw = "<think>t</think><answer>1 to 2</answer><correct></correct>"
        assert parse_lenient(raw) == parse_output(raw)[0]

    def test_answer_section_salvaged(self):
        """Test an answer is recovered when other sections are missing."""
        output = parse_lenient("<answer>From 2 to 6 seconds.</answer> trailing")
        assert output.answer == "From 2 to 6 seconds."
        assert output.segment == Segment(2.0, 6.0)

    def test_plain_text_answer(self):
        """Test untagged text becomes the answer with think removed."""
        output = parse_lenient("<think>maybe 1 to 2</think> The event happens at 10 to 12 s")
        assert output.segment == Segment(10.0, 12.0)
        assert "maybe" not in output.answer

    def test_blank(self):
        """Test blank input yields None."""
        assert parse_lenient("   ") is None

    def test_extract_sections(self):
        """Test first-occurrence section extraction."""
        sections = extract_sections("<answer> a </answer><answer>b</answer>")
        assert sections == {"think": None, "answer": "a", "correct": None}


class TestFuzz:
    """Robustness on arbitrary text."""

    TOKENS = ["<think>", "</think>", "<answer>", "</answer>", "<correct>", "</correct>",
              "<", ">", "/", "think", " ", "\n", "a", "7", ".", "to", "-", ",", "s",
              "3.5", "seconds", "é", "\x00", "answer>"]

    def test_never_raises(self):
        """Test 100k fuzzed strings parse without raising."""
        rng = random.Random(2024)
        for _ in range(100_000):
            raw = "".join(rng.choice(self.TOKENS) for _ in range(rng.randint(0, 16)))
            output, diagnostics = parse_output(raw)
            assert (output is None) == (not diagnostics.format_ok)
            if output is not None:
                assert output.raw == raw

    def test_lenient_never_raises(self):
        """Test lenient parsing is total on fuzzed strings."""
        rng = random.Random(7)
        for _ in range(20_000):
            raw = "".join(rng.choice(self.TOKENS) for _ in range(rng.randint(0, 16)))
            output = parse_lenient(raw)
            assert output is None or isinstance(output.answer, str)
            assert (output is None) == (not raw.strip())

    def test_random_bytes(self):
        """Test undecodable bytes, control bytes and lone surrogates never break parsing."""
        rng = np.random.default_rng(99)
        for _ in range(20_000):
            pieces = [rng.bytes(int(rng.integers(0, 24))).decode("utf-8", errors="surrogateescape")
                      for _ in range(3)]
            if rng.random() < 0.5:
                raw = "".join(pieces)
            else:
                raw = (f"<think>{pieces[0]}</think><answer>{pieces[1]}</answer>"
                       f"<correct>{pieces[2]}</correct>")
            output, diagnostics = parse_output(raw)
            assert (output is None) == (not diagnostics.format_ok)
            if output is not None:
                assert output.raw == raw
                assert output.segment == extract_segment(output.answer)
            lenient = parse_lenient(raw)
            assert (lenient is None) == (not raw.strip())
            segment = extract_segment(raw)
            assert segment is None or 0.0 <= segment.start <= segment.end
