#!/usr/bin/env python3
"""Regenerate the committed benchmark CSVs under data/.

The generators are fully deterministic, so rerunning this script must
leave the working tree unchanged.
"""

from pathlib import Path

from gpprog import synthetic

if __name__ == "__main__":
    outdir = Path(__file__).resolve().parent.parent / "data"
    written = synthetic.write_reference_csvs(outdir)
    for path in written:
        print(path)
