#!/usr/bin/env python3
# Copyright 2026 The pdnet Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Draws every *.plotspec in a results directory to a PNG next to it."""

import argparse
import pathlib
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def parse_spec(path):
    spec = {"where": [], "series": [], "y": "metric_mean", "data": "results.csv"}
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "plotspec 1":
        raise ValueError(f"{path}: not a plotspec")
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "where":
            k, _, v = rest.partition("=")
            spec["where"].append((k, v))
        elif key == "series":
            sel, _, label = rest.partition(" | ")
            parts = sel.split()
            hline = bool(parts) and parts[0] == "hline"
            if hline:
                parts = parts[1:]
            spec["series"].append(
                {"label": label, "hline": hline, "where": [tuple(p.split("=", 1)) for p in parts]}
            )
        else:
            spec[key] = rest
    return spec


def select(df, where):
    mask = pd.Series(True, index=df.index)
    for k, v in where:
        mask &= df[k] == v
    return df[mask]


def draw(spec, df, out):
    base = select(df, spec["where"])
    fig, ax = plt.subplots(figsize=(6, 4.2))
    xs = pd.to_numeric(base[spec["x"]]) if len(base) else pd.Series(dtype=float)
    for s in spec["series"]:
        rows = select(base, s["where"])
        if rows.empty:
            continue
        y = pd.to_numeric(rows[spec["y"]])
        if s["hline"]:
            ax.axhline(y.mean(), linestyle="--", label=s["label"])
            continue
        g = y.groupby(pd.to_numeric(rows[spec["x"]])).mean().sort_index()
        ax.plot(g.index, g.values, marker="o", label=s["label"])
    if len(xs) and xs.min() < xs.max():
        ax.set_xlim(xs.min(), xs.max())
    ax.set_title(spec.get("title", ""), fontsize=10)
    ax.set_xlabel(spec.get("xlabel", spec["x"]))
    ax.set_ylabel(spec.get("ylabel", spec["y"]))
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("results_dir", type=pathlib.Path)
    args = ap.parse_args(argv)
    specs = sorted(args.results_dir.glob("*.plotspec"))
    if not specs:
        print(f"no plotspecs in {args.results_dir}", file=sys.stderr)
        return 1
    for path in specs:
        spec = parse_spec(path)
        df = pd.read_csv(args.results_dir / spec["data"], dtype=str, keep_default_na=False)
        out = path.with_suffix(".png")
        draw(spec, df, out)
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
