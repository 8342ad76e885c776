"""Gantt charts of schedules as SVG or fixed-width text."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .mission import parse_action
from .schedule import Schedule

COLORS = {"GP": "#1f5fbf", "PU": "#d62728", "GW": "#f2c218", "PD": "#2ca02c"}
GLYPHS = {"GP": "g", "PU": "u", "GW": "w", "PD": "d"}

LANE_H = 28
LANE_GAP = 8
LABEL_W = 80
PLOT_W = 800
TOP = 24


def _kind(action: str) -> str:
    return parse_action(action)[0]


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def render_svg(schedule: Schedule, agents: list[str] | None = None) -> str:
    """One lane per agent; each action is a colored segment.  Enables edges
    that held a task back are drawn as dashed connectors."""
    lanes = agents if agents is not None else schedule.agents
    span = schedule.makespan or 1.0
    scale = PLOT_W / span
    height = TOP + len(lanes) * (LANE_H + LANE_GAP) + 30
    width = LABEL_W + PLOT_W + 20
    row = {a: i for i, a in enumerate(lanes)}

    def y(agent: str) -> float:
        return TOP + row[agent] * (LANE_H + LANE_GAP)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">'
    ]
    out.append(f'<text x="{LABEL_W}" y="14">makespan {_fmt(schedule.makespan)} s</text>')
    for agent in lanes:
        yy = y(agent)
        out.append(f'<text class="lane-label" x="4" y="{_fmt(yy + LANE_H / 2 + 4)}">{escape(agent)}</text>')
        out.append(
            f'<rect class="lane" x="{LABEL_W}" y="{_fmt(yy)}" width="{PLOT_W}" height="{LANE_H}" '
            'fill="#f4f4f4" stroke="#cccccc"/>'
        )
    for e in schedule.entries:
        if e.agent not in row:
            continue
        x = LABEL_W + e.start * scale
        w = max((e.end - e.start) * scale, 0.5)
        out.append(
            f'<rect class="seg" data-action="{escape(e.action)}" x="{_fmt(x)}" y="{_fmt(y(e.agent) + 3)}" '
            f'width="{_fmt(w)}" height="{LANE_H - 6}" fill="{COLORS[_kind(e.action)]}" stroke="#333333" '
            f'stroke-width="0.5"><title>{escape(e.action)} {_fmt(e.start)}-{_fmt(e.end)}</title></rect>'
        )
    where = {e.action: e for e in schedule.entries}
    for src, dst in schedule.binding_enables:
        a, b = where.get(src), where.get(dst)
        if a is None or b is None or a.agent not in row or b.agent not in row:
            continue
        x1, y1 = LABEL_W + a.end * scale, y(a.agent) + LANE_H / 2
        x2, y2 = LABEL_W + b.start * scale, y(b.agent) + LANE_H / 2
        out.append(
            f'<line class="enables" x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            'stroke="#000000" stroke-dasharray="4,3"/>'
        )
    ly = height - 10
    for i, (k, c) in enumerate(COLORS.items()):
        lx = LABEL_W + i * 70
        out.append(f'<rect x="{lx}" y="{ly - 9}" width="10" height="10" fill="{c}"/>')
        out.append(f'<text x="{lx + 14}" y="{ly}">{k}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_text(schedule: Schedule, width: int = 72) -> str:
    """Character bars (g/u/w/d per action type) followed by a segment list."""
    lanes = schedule.agents
    span = schedule.makespan or 1.0
    label = max([len(a) for a in lanes] + [5])
    lines = [f"makespan {_fmt(schedule.makespan)}"]
    for agent in lanes:
        bar = [" "] * width
        for e in schedule.lane(agent):
            lo = int(e.start / span * width)
            hi = max(lo + 1, int(round(e.end / span * width)))
            for i in range(lo, min(hi, width)):
                bar[i] = GLYPHS[_kind(e.action)]
        lines.append(f"{agent:<{label}} |{''.join(bar)}|")
    lines.append("")
    for e in schedule.entries:
        lines.append(f"{e.agent:<{label}} {e.action:<14} {e.start:10.2f} {e.end:10.2f}")
    for src, dst in schedule.binding_enables:
        lines.append(f"enables {src} -> {dst}")
    return "\n".join(lines) + "\n"


def segment_counts(schedule: Schedule) -> dict[str, int]:
    return {a: len(schedule.lane(a)) for a in schedule.agents}
