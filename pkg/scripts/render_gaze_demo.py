#!/usr/bin/env python3
"""Gaze-pipeline demo: synthesize one reading, detect fixations, and write
the rendered attention heatmap plus the raw image side by side as PGM files.
"""

import argparse
import os
import sys

from gazedet import dataset as ds
from gazedet import gaze as gz
from gazedet.trainer import fixation_map_for


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/gaze_demo")
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    reading = ds.synth_generate(
        ds.SynthConfig(n_readings=1, img_size=args.size), args.seed)[0]
    filtered = gz.filter_gaze(reading.gaze, reading.width, reading.height)
    fixations = gz.detect_fixations(
        filtered,
        dispersion_px=gz.scaled_default(gz.DEFAULT_DISPERSION_PX, reading.width),
        min_duration_ms=gz.DEFAULT_MIN_DURATION_MS,
    )
    print(f"{len(reading.gaze)} gaze samples -> {len(filtered)} filtered -> "
          f"{len(fixations)} fixations")
    for f in fixations:
        print(f"  ({f.cx_px:6.2f}, {f.cy_px:6.2f})  "
              f"{f.start_ms:7.1f}..{f.end_ms:7.1f} ms")
    for ann in reading.annotations:
        print(f"  lesion {ann.label.name} at ({ann.cx:.1f}, {ann.cy:.1f})")

    os.makedirs(args.out, exist_ok=True)
    fmap = fixation_map_for(reading, args.size)
    gz.write_pgm(os.path.join(args.out, "image.pgm"), reading.image)
    gz.write_pgm(os.path.join(args.out, "heatmap.pgm"), fmap.values)
    gz.write_fixation_csv(os.path.join(args.out, "fixations.csv"), fixations)
    print(f"wrote image.pgm / heatmap.pgm / fixations.csv to {args.out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
