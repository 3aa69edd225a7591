"""Terminal rendering of tokens annotated with control states."""
from typing import List, Optional, Sequence

from pcgen.inference.structures import Segmentation

RESET = "\033[0m"
PALETTE = ("\033[31m", "\033[32m", "\033[33m", "\033[34m", "\033[35m", "\033[36m",
           "\033[91m", "\033[92m", "\033[93m", "\033[94m", "\033[95m", "\033[96m")


def _paint(text: str, state: int, color: bool) -> str:
    if not color:
        return text
    return f"{PALETTE[state % len(PALETTE)]}{text}{RESET}"


def render_states(tokens: Sequence[str], states: Segmentation, color: bool = True) -> str:
    """`[w1 w2]_c` per span; spans coloured by state id."""
    parts: List[str] = []
    for span in states.spans:
        words = " ".join(tokens[span.start:span.end])
        parts.append(_paint(f"[{words}]_{span.label}", span.label, color))
    return " ".join(parts)


def render_legend(state_names: Sequence[str], color: bool = True) -> str:
    return "  ".join(_paint(f"{c}={name}", c, color) for c, name in enumerate(state_names))


def render_block(title: str, tokens: Sequence[str], states: Segmentation, state_names: Optional[Sequence[str]] = None,
                 color: bool = True) -> str:
    lines = [title, "  " + render_states(tokens, states, color)]
    if state_names is not None:
        lines.append("  legend: " + render_legend(state_names, color))
    return "\n".join(lines)
