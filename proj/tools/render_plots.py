#!/usr/bin/env python3
"""Render a report directory (CSV outputs of `dzlab report`) to report.html with inline SVG."""

import csv
import html
import sys
from pathlib import Path

W, H, PAD = 560, 300, 48
COLORS = ["#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2"]


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def bars(title, groups, series, ymax=1.0, fmt="{:.0%}"):
    """groups: category labels; series: [(name, [values per group])]."""
    n_g, n_s = len(groups), len(series)
    slot = (W - 2 * PAD) / max(n_g, 1)
    bw = slot * 0.8 / max(n_s, 1)
    y = lambda v: H - PAD - (H - 2 * PAD) * v / ymax
    out = [f'<svg width="{W}" height="{H}" xmlns="http://www.w3.org/2000/svg">',
           f'<text x="{W / 2}" y="18" text-anchor="middle" font-weight="bold">{html.escape(title)}</text>',
           f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>']
    for k in range(5):
        v = ymax * k / 4
        out.append(f'<text x="{PAD - 4}" y="{y(v) + 4}" text-anchor="end" font-size="10">{fmt.format(v)}</text>')
        out.append(f'<line x1="{PAD}" y1="{y(v)}" x2="{W - PAD}" y2="{y(v)}" stroke="#ddd"/>')
    for g, name in enumerate(groups):
        x0 = PAD + g * slot + slot * 0.1
        out.append(f'<text x="{x0 + slot * 0.4}" y="{H - PAD + 14}" text-anchor="middle" font-size="11">{html.escape(name)}</text>')
        for s, (_, vals) in enumerate(series):
            v = vals[g]
            out.append(f'<rect x="{x0 + s * bw}" y="{y(v)}" width="{bw - 1}" height="{H - PAD - y(v)}" '
                       f'fill="{COLORS[s % len(COLORS)]}"><title>{fmt.format(v)}</title></rect>')
    for s, (label, _) in enumerate(series):
        lx = PAD + s * 110
        out.append(f'<rect x="{lx}" y="{H - 18}" width="10" height="10" fill="{COLORS[s % len(COLORS)]}"/>')
        out.append(f'<text x="{lx + 14}" y="{H - 9}" font-size="11">{html.escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def scatter(title, points, xlabel, ylabel):
    """points: [(series name, x, y)]."""
    if not points:
        return ""
    xs = [p[1] for p in points]
    ys = [p[2] for p in points]
    xmax, ymax = max(xs) * 1.05 or 1, max(ys) * 1.05 or 1
    names = sorted({p[0] for p in points})
    sx = lambda v: PAD + (W - 2 * PAD) * v / xmax
    sy = lambda v: H - PAD - (H - 2 * PAD) * v / ymax
    out = [f'<svg width="{W}" height="{H}" xmlns="http://www.w3.org/2000/svg">',
           f'<text x="{W / 2}" y="18" text-anchor="middle" font-weight="bold">{html.escape(title)}</text>',
           f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
           f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
           f'<text x="{W / 2}" y="{H - PAD + 28}" text-anchor="middle" font-size="11">{html.escape(xlabel)}</text>',
           f'<text x="12" y="{H / 2}" font-size="11" transform="rotate(-90 12 {H / 2})" text-anchor="middle">{html.escape(ylabel)}</text>']
    for k in range(5):
        out.append(f'<text x="{sx(xmax * k / 4)}" y="{H - PAD + 12}" text-anchor="middle" font-size="10">{xmax * k / 4:.1f}</text>')
        out.append(f'<text x="{PAD - 4}" y="{sy(ymax * k / 4) + 4}" text-anchor="end" font-size="10">{ymax * k / 4:.1f}</text>')
    for name, x, yv in points:
        c = COLORS[names.index(name) % len(COLORS)]
        out.append(f'<circle cx="{sx(x):.1f}" cy="{sy(yv):.1f}" r="2.5" fill="{c}" fill-opacity="0.6"/>')
    for s, name in enumerate(names):
        lx = W - PAD - 90
        out.append(f'<circle cx="{lx}" cy="{PAD + 14 * s}" r="4" fill="{COLORS[s % len(COLORS)]}"/>')
        out.append(f'<text x="{lx + 8}" y="{PAD + 14 * s + 4}" font-size="11">{html.escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def main(argv):
    if len(argv) != 2:
        print("usage: render_plots.py REPORT_DIR", file=sys.stderr)
        return 2
    d = Path(argv[1])
    parts = ["<!doctype html><html><head><meta charset='utf-8'><title>dzlab report</title></head>"
             "<body style='font-family:sans-serif'>"]

    if (d / "behavior.csv").exists():
        rows = [r for r in read_csv(d / "behavior.csv") if r["driver"] != "fleet"]
        parts.append(bars("Go and red-light-running rates per driver", [r["driver"] for r in rows],
                          [("PofGo", [float(r["pof_go"]) for r in rows]),
                           ("PofRR", [float(r["pof_rr"]) for r in rows])]))

    if (d / "decision_timing.csv").exists():
        rows = read_csv(d / "decision_timing.csv")
        parts.append(scatter("Refined time to stop-line at the decision",
                             [(r["decision"], float(r["position_m"]), float(r["refined_time_s"])) for r in rows],
                             "distance to stop-line [m]", "refined time [s]"))

    if (d / "accuracy.csv").exists():
        rows = read_csv(d / "accuracy.csv")
        models = [r for r in rows if not r["row"].startswith("IMPRV")]
        cols = [c for c in rows[0].keys() if c != "row"]
        parts.append(bars("Test accuracy by model", cols,
                          [(m["row"], [float(m[c]) for c in cols]) for m in models]))

    parts.append("</body></html>")
    (d / "report.html").write_text("\n".join(parts))
    print(d / "report.html")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
