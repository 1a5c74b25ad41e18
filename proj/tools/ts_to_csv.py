#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Convert a .ts archive file (equal length, class labels) to the dmae CSV layout.

Writes <out>.csv with rows `sample_id,variable_index,v_0,...` and
<out>_labels.csv with rows `sample_id,label`.

    tools/ts_to_csv.py BasicMotions_TRAIN.ts data/BasicMotions/train --prefix train
"""

import argparse
import csv
import pathlib
import sys


def parse_ts(text):
    samples = []
    in_data = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not in_data:
            if line.lower() == "@data":
                in_data = True
            continue
        *dims, label = line.split(":")
        series = [[float(v) for v in d.split(",")] for d in dims]
        if len({len(s) for s in series}) != 1:
            raise ValueError(f"unequal variable lengths in sample {len(samples)}")
        samples.append((series, label))
    if not samples:
        raise ValueError("no @data section")
    return samples


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("src", type=pathlib.Path)
    ap.add_argument("out", type=pathlib.Path, help="output stem (no extension)")
    ap.add_argument("--prefix", default="s", help="sample id prefix")
    args = ap.parse_args()

    samples = parse_ts(args.src.read_text())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    length = len(samples[0][0][0])
    with open(args.out.with_suffix(".csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "variable_index"] + [f"v_{t}" for t in range(length)])
        for i, (series, _) in enumerate(samples):
            for v, s in enumerate(series):
                w.writerow([f"{args.prefix}{i}", v] + [repr(x) for x in s])
    with open(args.out.parent / (args.out.name + "_labels.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "label"])
        for i, (_, label) in enumerate(samples):
            w.writerow([f"{args.prefix}{i}", label])
    print(f"{len(samples)} samples, {len(samples[0][0])} variables, length {length}", file=sys.stderr)


if __name__ == "__main__":
    main()
