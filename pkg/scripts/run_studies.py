"""Run the four preset studies at desk scale and write their outputs.

    python3 scripts/run_studies.py --ks 3,4,5,6 --out results/

Each study lands in its own sub-directory (CSV, JSON, plot data, manifest).
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from aisml2r.bench_cli import PRESETS, default_output_dir, emit_outputs, format_table, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ks", default="3,4,5,6", help="comma-separated k values (eps = 2^-k)")
    ap.add_argument("--studies", default=",".join(PRESETS), help="comma-separated preset names")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = args.out or default_output_dir()
    ks = tuple(int(k) for k in args.ks.split(","))
    for name in args.studies.split(","):
        cfg = replace(PRESETS[name], ks=ks, workers=args.workers)
        res = run_experiment(cfg)
        emit_outputs(res, res.manifest, cfg.formats, out / name)
        print(f"\n== {name} ==")
        print(format_table(res.table))


if __name__ == "__main__":
    main()
