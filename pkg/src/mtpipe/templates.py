"""Instruction prompt rendering and parsing.

Four prompt layouts are supported: a zero-shot instruction and three few-shot
layouts. Layout 2 (a numbered examples section followed by the instruction) is
the toolkit default for few-shot prompts. Rendering is byte-exact against the
grammar below and `parse` inverts it, so every emitted prompt can be verified
mechanically.

Grammar (LF line separator everywhere, no trailing newline):

    zero_shot:   Translate the source text from {X} to {Y}.
                 Source: {src}
                 Target:

    few_shot_1:  per example: the zero_shot block with "Target: {tgt}",
                 blocks separated by single newlines, then the zero_shot block.

    few_shot_2:  Consider the following {N} translations from {X} to {Y}.
                 then per example i: "Example {i}\\nSource: {s}\\nTarget: {t}",
                 single newline between examples, one blank line, then the
                 zero_shot block.

    few_shot_3:  Consider the following translations from {X} to {Y}.
                 then per example: "Source: {s}\\nTarget: {t}", single newline
                 between examples, one blank line, then the zero_shot block.

The final "Target:" carries no trailing space; completions start with a single
space so prompt + completion concatenation is byte-stable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Mapping, Sequence

if TYPE_CHECKING:
    from mtpipe.corpus import ParallelSegment


class TemplateId(Enum):
    ZERO_SHOT = "zero_shot"
    FEW_SHOT_1 = "few_shot_1"
    FEW_SHOT_2 = "few_shot_2"
    FEW_SHOT_3 = "few_shot_3"


DEFAULT_FEW_SHOT = TemplateId.FEW_SHOT_2
MAX_SHOTS = 5

#: Marker appended to training completions; the trainer substitutes its
#: tokenizer's real end-of-sequence token.
EOS_PLACEHOLDER = "<EOS>"

#: Built-in display names. Unknown codes need an explicit user-supplied name.
LANGUAGE_NAMES: dict[str, str] = {
    "nl": "Dutch",
    "fr": "French",
    "de": "German",
    "pt": "Portuguese",
    "ru": "Russian",
    "en": "English",
    "zh": "Chinese",
}

# Separator between consecutive example blocks in the few-shot layouts. The
# source layouts only pin a blank line before the final instruction; a single
# newline between examples is assumed and isolated here for easy revision.
_EXAMPLE_SEP = "\n"

_INSTRUCTION = "Translate the source text from {src} to {tgt}."
_COUNTED_HEADER = "Consider the following {n} translations from {src} to {tgt}."
_PLAIN_HEADER = "Consider the following translations from {src} to {tgt}."

# Conservative shape for display names; forbidding " to " and "." keeps the
# header line uniquely parseable.
_NAME_RE = re.compile(r"^[A-Z][A-Za-z0-9' ()\-]*$")


class TemplateError(ValueError):
    """Invalid prompt spec (e.g. shot count out of range for the template)."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


class PromptParseError(ValueError):
    """Input does not conform to the prompt grammar."""

    def __init__(self, offset: int, expected: str, message: str | None = None) -> None:
        super().__init__(message or f"malformed_prompt at byte {offset}: expected {expected!r}")
        self.code = "malformed_prompt"
        self.offset = offset
        self.expected = expected


def display_name(code: str, overrides: Mapping[str, str] | None = None) -> str:
    """Display name for a language code, consulting `overrides` first."""
    if overrides and code in overrides:
        return overrides[code]
    try:
        return LANGUAGE_NAMES[code]
    except KeyError:
        raise TemplateError(
            "unknown_language",
            f"no display name for language code {code!r}; supply one explicitly",
        ) from None


def _check_text(value: str, what: str) -> None:
    if not value:
        raise TemplateError("invalid_field", f"{what} must be nonempty")
    if "\n" in value:
        raise TemplateError("invalid_field", f"{what} must not contain newlines: {value!r}")


def _check_name(value: str, what: str) -> None:
    if not _NAME_RE.match(value) or " to " in value:
        raise TemplateError(
            "invalid_field",
            f"{what} must be a capitalized exonym without ' to ' or '.': {value!r}",
        )


@dataclass(frozen=True)
class PromptSpec:
    """Everything needed to render one prompt.

    `src_name`/`tgt_name` are capitalized English exonyms ("German", not
    "de"); `shots` is an ordered tuple of (source, target) example pairs.
    """

    template: TemplateId
    src_name: str
    tgt_name: str
    source: str
    shots: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "shots", tuple((s, t) for s, t in self.shots))
        _check_name(self.src_name, "src_name")
        _check_name(self.tgt_name, "tgt_name")
        _check_text(self.source, "source")
        for i, (s, t) in enumerate(self.shots, 1):
            _check_text(s, f"shot {i} source")
            _check_text(t, f"shot {i} target")
        n = len(self.shots)
        if self.template is TemplateId.ZERO_SHOT:
            if n != 0:
                raise TemplateError(
                    "shot_count_mismatch", f"zero_shot takes no shots, got {n}"
                )
        elif not 1 <= n <= MAX_SHOTS:
            raise TemplateError(
                "shot_count_mismatch",
                f"{self.template.value} takes 1..{MAX_SHOTS} shots, got {n}",
            )


def render(spec: PromptSpec) -> str:
    """Render a spec to its exact prompt string (pure function)."""
    instruction = _INSTRUCTION.format(src=spec.src_name, tgt=spec.tgt_name)
    final = f"{instruction}\nSource: {spec.source}\nTarget:"
    if spec.template is TemplateId.ZERO_SHOT:
        return final
    if spec.template is TemplateId.FEW_SHOT_1:
        blocks = [f"{instruction}\nSource: {s}\nTarget: {t}" for s, t in spec.shots]
        return _EXAMPLE_SEP.join(blocks) + "\n" + final
    if spec.template is TemplateId.FEW_SHOT_2:
        header = _COUNTED_HEADER.format(
            n=len(spec.shots), src=spec.src_name, tgt=spec.tgt_name
        )
        blocks = [
            f"Example {i}\nSource: {s}\nTarget: {t}"
            for i, (s, t) in enumerate(spec.shots, 1)
        ]
        return header + "\n" + _EXAMPLE_SEP.join(blocks) + "\n\n" + final
    header = _PLAIN_HEADER.format(src=spec.src_name, tgt=spec.tgt_name)
    blocks = [f"Source: {s}\nTarget: {t}" for s, t in spec.shots]
    return header + "\n" + _EXAMPLE_SEP.join(blocks) + "\n\n" + final


def completion_for(segment: "ParallelSegment", eos: str = EOS_PLACEHOLDER) -> str:
    """Training completion paired with a rendered prompt.

    A single leading space joins the completion to the bare "Target:" line;
    the EOS marker teaches finetuned models to terminate instead of running
    past the translation.
    """
    return " " + segment.tgt_text + eos


class _Cursor:
    """Character cursor over a prompt with token-level mismatch reporting."""

    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0

    def byte_offset(self, pos: int | None = None) -> int:
        return len(self.text[: self.pos if pos is None else pos].encode("utf-8"))

    def fail(self, expected: str, pos: int | None = None) -> "PromptParseError":
        return PromptParseError(self.byte_offset(pos), expected)

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos : self.pos + 1]

    def startswith(self, literal: str) -> bool:
        return self.text.startswith(literal, self.pos)

    def expect(self, literal: str) -> None:
        """Consume `literal` or report the first mismatching token within it."""
        text = self.text
        for i, ch in enumerate(literal):
            pos = self.pos + i
            if pos >= len(text) or text[pos] != ch:
                token_start = i
                while token_start > 0 and literal[token_start - 1] not in " \n":
                    token_start -= 1
                token_end = i
                while token_end < len(literal) and literal[token_end] not in " \n":
                    token_end += 1
                token = literal[token_start:token_end] or literal[i : i + 1]
                raise self.fail(token, self.pos + token_start)
        self.pos += len(literal)

    def take_line(self) -> str:
        """Consume up to (not including) the next newline or end of input."""
        end = self.text.find("\n", self.pos)
        if end == -1:
            end = len(self.text)
        value = self.text[self.pos : end]
        self.pos = end
        return value


def _parse_header_names(cursor: _Cursor) -> tuple[str, str]:
    """Parse '{X} to {Y}.' at the cursor (names contain no ' to ' or '.')."""
    start = cursor.pos
    line = cursor.take_line()
    if not line.endswith("."):
        raise cursor.fail(".", start + len(line))
    body = line[:-1]
    src_name, sep, tgt_name = body.rpartition(" to ")
    if not sep:
        raise cursor.fail("to", start + len(body))
    return src_name, tgt_name


def _finish_spec(
    cursor: _Cursor,
    template: TemplateId,
    src_name: str,
    tgt_name: str,
    source: str,
    shots: list[tuple[str, str]],
    header_pos: int,
) -> PromptSpec:
    try:
        return PromptSpec(template, src_name, tgt_name, source, tuple(shots))
    except TemplateError as exc:
        raise PromptParseError(
            cursor.byte_offset(header_pos), "valid prompt fields", str(exc)
        ) from exc


def parse(prompt: str) -> PromptSpec:
    """Parse a prompt back into its spec. Inverse of `render` on valid specs.

    Non-conforming input raises `PromptParseError` carrying the byte offset of
    the first mismatching token and the token that was expected there.
    """
    cursor = _Cursor(prompt)
    if cursor.startswith("Consider"):
        return _parse_examples_section(cursor)
    return _parse_instruction_chain(cursor)


def _parse_instruction_chain(cursor: _Cursor) -> PromptSpec:
    """zero_shot or few_shot_1: instruction blocks, last one with bare Target:."""
    shots: list[tuple[str, str]] = []
    src_name = tgt_name = None
    while True:
        header_pos = cursor.pos
        cursor.expect("Translate the source text from ")
        block_src, block_tgt = _parse_header_names(cursor)
        if src_name is None:
            src_name, tgt_name = block_src, block_tgt
        elif (block_src, block_tgt) != (src_name, tgt_name):
            raise PromptParseError(
                cursor.byte_offset(header_pos),
                f"{src_name} to {tgt_name}",
                "language names differ between blocks",
            )
        cursor.expect("\nSource: ")
        source = cursor.take_line()
        cursor.expect("\nTarget:")
        if cursor.at_end():
            template = TemplateId.ZERO_SHOT if not shots else TemplateId.FEW_SHOT_1
            assert src_name is not None and tgt_name is not None
            return _finish_spec(cursor, template, src_name, tgt_name, source, shots, 0)
        cursor.expect(" ")
        target = cursor.take_line()
        shots.append((source, target))
        cursor.expect(_EXAMPLE_SEP)


def _parse_examples_section(cursor: _Cursor) -> PromptSpec:
    """few_shot_2 (counted header, Example markers) or few_shot_3 (plain)."""
    cursor.expect("Consider the following ")
    declared: int | None = None
    count_pos = cursor.pos
    if cursor.peek().isdigit():
        digits = ""
        while cursor.peek().isdigit():
            digits += cursor.peek()
            cursor.pos += 1
        declared = int(digits)
        cursor.expect(" ")
    cursor.expect("translations from ")
    src_name, tgt_name = _parse_header_names(cursor)
    cursor.expect("\n")

    template = TemplateId.FEW_SHOT_2 if declared is not None else TemplateId.FEW_SHOT_3
    shots: list[tuple[str, str]] = []
    while True:
        if template is TemplateId.FEW_SHOT_2:
            cursor.expect(f"Example {len(shots) + 1}\n")
        cursor.expect("Source: ")
        source = cursor.take_line()
        cursor.expect("\nTarget: ")
        target = cursor.take_line()
        shots.append((source, target))
        cursor.expect("\n")
        if cursor.startswith("\n"):
            cursor.pos += 1
            break

    if declared is not None and declared != len(shots):
        raise PromptParseError(
            cursor.byte_offset(count_pos),
            str(len(shots)),
            f"header declares {declared} examples but {len(shots)} are present",
        )

    cursor.expect("Translate the source text from ")
    final_src, final_tgt = _parse_header_names(cursor)
    if (final_src, final_tgt) != (src_name, tgt_name):
        raise PromptParseError(
            cursor.byte_offset(),
            f"{src_name} to {tgt_name}",
            "language names differ between header and instruction",
        )
    cursor.expect("\nSource: ")
    source = cursor.take_line()
    cursor.expect("\nTarget:")
    if not cursor.at_end():
        raise cursor.fail("end of prompt")
    return _finish_spec(cursor, template, src_name, tgt_name, source, shots, 0)


def spec_for(
    template: TemplateId,
    pair_src: str,
    pair_tgt: str,
    source: str,
    shots: Sequence[tuple[str, str]] = (),
    names: Mapping[str, str] | None = None,
) -> PromptSpec:
    """Build a spec from language codes, resolving display names."""
    return PromptSpec(
        template=template,
        src_name=display_name(pair_src, names),
        tgt_name=display_name(pair_tgt, names),
        source=source,
        shots=tuple(shots),
    )
