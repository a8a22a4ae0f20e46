"""Train one model per dz head mode with identical seeds and compare on held-out scenes.

Writes <out>/<mode>/ (training artifacts and eval report) and <out>/ablation.csv.
"""
import argparse
import json
import sys
from pathlib import Path

from symmpose import cli, io
from symmpose.trainer import DZ_MODES


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(Path(__file__).parent / "configs" / "c1.json"))
    ap.add_argument("--out", default="runs/dz_ablation")
    ap.add_argument("--grid", default=None, help="grid file; a 480k grid is built when omitted")
    ap.add_argument("--seed", type=int, default=None)
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = a.grid
    if grid is None:
        grid = str(out / "grid")
        if cli.main(["sample-so3", "4000", "120", "--probes", "1000", "--out", grid]) != 0:
            return 2
        grid = str(Path(grid) / "grid.bin")
    base = json.loads(Path(a.config).read_text())
    rows = []
    for mode in DZ_MODES:
        cfg = json.loads(json.dumps(base))
        cfg.setdefault("train", {})["dz_mode"] = mode
        cfg_path = out / f"{mode}.json"
        cfg_path.write_text(json.dumps(cfg, indent=2))
        run = out / mode
        seed = ["--seed", str(a.seed)] if a.seed is not None else []
        if cli.main(["train", "--config", str(cfg_path), "--out", str(run)] + seed) != 0:
            return 2
        if cli.main(["eval", str(run / "checkpoint"), grid, str(run / "test"), "--out", str(run / "eval"),
                     "--no-diagnostics"]) != 0:
            return 2
        agg = io.read_json(run / "eval" / "report.json")["aggregates"]
        rows.append({"dz_mode": mode, **{k: agg[k] for k in ("dz_abs_err_median", "z_rel_err_median",
                                                              "trans_rel_median", "rot_err_deg_median")}})
        print(json.dumps(rows[-1]))
    io.write_csv(out / "ablation.csv", list(rows[0]), rows, f"config_hash={io.config_hash(base)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
