"""
Token-level renderings of masks and attribution scores as ANSI terminal text or HTML.

Soft masks are drawn on a green scale whose intensity follows the mask value; rounded masks
are drawn bold where the mask is 1. Signed scores use green for positive and red for negative
contributions.

Examples:
    >>> from wyr.data.tokenizer import TokenSequence, Vocabulary
    >>> vocab = Vocabulary(k=2)
    >>> x = TokenSequence([4, 14])
    >>> render_mask(x, [0.0, 0.0], vocab, "ansi")
    'ACGT'
    >>> render_mask(x, [1.0, 0.0], vocab, "ansi")
    '\\x1b[48;2;0;160;0mAC\\x1b[0mGT'
    >>> render_mask(x, BinaryMask.from_values([0, 1]), vocab, "ansi")
    'AC\\x1b[1mGT\\x1b[0m'
"""

from __future__ import annotations

import html
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from wyr.data.tokenizer import TokenSequence, Vocabulary, detokenize
from wyr.masking import BinaryMask, SoftMask

logger = logging.getLogger(__name__)

FORMATS = ("ansi", "html")
GREEN = (0, 160, 0)
RED = (200, 0, 0)
WHITE = (255, 255, 255)
RESET = "\x1b[0m"
BOLD = "\x1b[1m"

MaskInput = Union[SoftMask, BinaryMask, Sequence[float], np.ndarray]


def _check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")


def shade(value: float, colour: Tuple[int, int, int] = GREEN) -> Tuple[int, int, int]:
    """
    Blend white towards `colour` by `value` in [0, 1].

    Examples:
        >>> shade(0.0), shade(1.0), shade(0.5)
        ((255, 255, 255), (0, 160, 0), (128, 208, 128))
    """
    value = float(np.clip(value, 0.0, 1.0))
    return tuple(int(np.floor(w + (c - w) * value + 0.5)) for w, c in zip(WHITE, colour))


def _row(mask: MaskInput, length: int) -> Tuple[np.ndarray, bool]:
    if isinstance(mask, BinaryMask):
        values, rounded = mask.row(0), True
    elif isinstance(mask, SoftMask):
        values, rounded = mask.row(0), False
    else:
        values, rounded = np.asarray(mask, dtype=np.float64).reshape(-1)[:length], False
    if values.size != length:
        raise ValueError(f"mask with {values.size} values for {length} tokens")
    return values, rounded


def _ansi_token(token: str, rgb: Optional[Tuple[int, int, int]], bold: bool = False) -> str:
    if bold:
        return f"{BOLD}{token}{RESET}"
    if rgb is None:
        return token
    return f"\x1b[48;2;{rgb[0]};{rgb[1]};{rgb[2]}m{token}{RESET}"


def _html_token(token: str, rgb: Optional[Tuple[int, int, int]], title: str, bold=False) -> str:
    styles = []
    if rgb is not None:
        styles.append(f"background-color:rgb({rgb[0]},{rgb[1]},{rgb[2]})")
    if bold:
        styles.append("font-weight:bold")
    style = f' style="{";".join(styles)}"' if styles else ""
    return f'<span{style} title="{title}">{html.escape(token)}</span>'


def _html_block(spans: Iterable[str], caption: str = "") -> str:
    head = f"<p>{html.escape(caption)}</p>" if caption else ""
    return f'<div class="sequence">{head}<code>{"".join(spans)}</code></div>'


def html_document(blocks: Sequence[str], title: str = "masks") -> str:
    """Wrap rendered blocks in a standalone HTML page with inline styles only."""
    body = "\n".join(blocks)
    return (
        "<!DOCTYPE html>\n"
        f'<html><head><meta charset="utf-8"><title>{html.escape(title)}</title></head>\n'
        '<body style="font-family:monospace;word-wrap:break-word">\n'
        f"{body}\n</body></html>\n"
    )


def _tokens(x: TokenSequence, vocab: Vocabulary) -> List[str]:
    return detokenize(x.tokens, vocab)


def _render_mask_parts(x: TokenSequence, mask: MaskInput, vocab: Vocabulary, fmt: str):
    tokens = _tokens(x, vocab)
    values, rounded = _row(mask, len(tokens))
    parts = []
    for token, value in zip(tokens, values):
        bold = rounded and value >= 1
        rgb = None if rounded or value <= 0 else shade(value)
        if fmt == "ansi":
            parts.append(_ansi_token(token, rgb, bold))
        else:
            parts.append(_html_token(token, rgb, f"{value:.3f}", bold))
    return parts


def render_mask(
    x: TokenSequence,
    mask: MaskInput,
    vocab: Vocabulary,
    format: str = "ansi",
    caption: str = "",
) -> str:
    """
    Render one sequence with its mask: ANSI text, or a standalone HTML page with one span per
    token.

    Raises:
        ValueError: for an unknown format or a mask that does not cover the sequence
    """
    _check_format(format)
    parts = _render_mask_parts(x, mask, vocab, format)
    if format == "ansi":
        return "".join(parts)
    return html_document([_html_block(parts, caption)])


@dataclass(frozen=True)
class Attribution:
    """Signed per-token scores, drawn in a gallery in place of a mask."""

    scores: np.ndarray
    lower_bound: Optional[float] = None


def _render_score_parts(
    x: TokenSequence,
    scores: Sequence[float],
    vocab: Vocabulary,
    fmt: str,
    lower_bound: Optional[float],
) -> List[str]:
    tokens = _tokens(x, vocab)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)[: len(tokens)]
    if scores.size != len(tokens):
        raise ValueError(f"{scores.size} scores for {len(tokens)} tokens")
    peak = np.abs(scores).max() if scores.size else 0.0
    scaled = scores / peak if peak > 0 else np.zeros_like(scores)
    parts = []
    for token, score, value in zip(tokens, scores, scaled):
        hidden = value == 0 or (lower_bound is not None and value < lower_bound)
        rgb = None if hidden else shade(abs(value), GREEN if value > 0 else RED)
        if fmt == "ansi":
            parts.append(_ansi_token(token, rgb))
        else:
            parts.append(_html_token(token, rgb, f"{score:.4f}"))
    return parts


def render_scores(
    x: TokenSequence,
    scores: Sequence[float],
    vocab: Vocabulary,
    format: str = "ansi",
    lower_bound: Optional[float] = None,
    caption: str = "",
) -> str:
    """
    Render signed per-token attributions on a red to green scale.

    Scores are divided by their largest magnitude. With `lower_bound`, tokens whose scaled
    score falls below it are left uncoloured: `0` hides negative contributions and `0.5` keeps
    only strongly positive ones.
    """
    _check_format(format)
    parts = _render_score_parts(x, scores, vocab, format, lower_bound)
    if format == "ansi":
        return "".join(parts)
    return html_document([_html_block(parts, caption)])


def gallery(
    items: Sequence[Tuple[str, TokenSequence, Union[MaskInput, Attribution]]],
    vocab: Vocabulary,
    path: Optional[Union[str, Path]] = None,
    title: str = "mask gallery",
) -> str:
    """One HTML page with a captioned block per `(caption, sequence, mask or attribution)`."""
    blocks = []
    for caption, x, shown in items:
        if isinstance(shown, Attribution):
            parts = _render_score_parts(x, shown.scores, vocab, "html", shown.lower_bound)
        else:
            parts = _render_mask_parts(x, shown, vocab, "html")
        blocks.append(_html_block(parts, caption))
    page = html_document(blocks, title)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(page, encoding="utf-8")
        logger.info("wrote gallery of %d blocks to %s", len(items), path)
    return page
