"""Train and evaluate the trivial-group and C4 objects on the 480k grid.

Prints the headline metrics and coset masses; full reports land in <out>/<name>/eval.
"""
import argparse
import json
import sys
from pathlib import Path

from symmpose import cli, io

HERE = Path(__file__).parent / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/symmetry")
    ap.add_argument("--configs", nargs="+", default=[str(HERE / "c1.json"), str(HERE / "c4.json")])
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = out / "grid"
    if not (grid / "grid.bin").exists() and cli.main(["sample-so3", "4000", "120", "--probes", "1000",
                                                      "--out", str(grid)]) != 0:
        return 2
    for cfg in a.configs:
        run = out / Path(cfg).stem
        if cli.main(["train", "--config", cfg, "--out", str(run)]) != 0:
            return 2
        if cli.main(["eval", str(run / "checkpoint"), str(grid / "grid.bin"), str(run / "test"),
                     "--out", str(run / "eval")]) != 0:
            return 2
        rep = io.read_json(run / "eval" / "report.json")
        agg, diag = rep["aggregates"], rep["diagnostics"]
        print(Path(cfg).stem, json.dumps({k: agg[k] for k in ("rot_err_deg_median", "trans_rel_median")}),
              json.dumps({k: v for k, v in diag.items() if k.startswith("coset")}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
