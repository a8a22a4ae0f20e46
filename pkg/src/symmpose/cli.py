"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
numeric failure, 3 file errors (missing, unreadable, corrupt or incompatible).
Configs are JSON; nothing is read from the environment.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io, matcher, so3
from .errors import FormatError, IncompatibleError, InvalidInputError, SymmposeError
from .evaluation import evaluate
from .synthetic import ObjectSpec, SceneConfig, generate_dataset, make_object
from .trainer import History, TrainConfig, _step_losses, build_model_library, model_arrays, train

log = logging.getLogger("symmpose")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class DataConfig:
    n_train: int = 2000
    n_test: int = 200
    train_seed: int = 1
    test_seed: int = 2

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise InvalidInputError("n_train and n_test must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    object: ObjectSpec = field(default_factory=ObjectSpec)
    scene: SceneConfig = field(default_factory=SceneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"object", "scene", "data", "train"}
        if unknown:
            raise InvalidInputError(f"unknown config sections {sorted(unknown)}")
        obj = dict(d.get("object", {}))
        if "axis" in obj:
            obj["axis"] = tuple(obj["axis"])
        try:
            spec = ObjectSpec(**obj)
            scene = SceneConfig(**d.get("scene", {}))
            data = DataConfig(**d.get("data", {}))
        except TypeError as exc:
            raise InvalidInputError(f"bad config field: {exc}") from None
        make_object(spec)  # validates symmetry settings
        return cls(spec, scene, data, TrainConfig.from_dict(d.get("train", {})))

    def to_dict(self) -> dict:
        return {"object": asdict(self.object), "scene": asdict(self.scene), "data": asdict(self.data),
                "train": self.train.to_dict()}

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return RunConfig(self.object, self.scene, self.data, TrainConfig.from_dict({**self.train.to_dict(),
                                                                                     "seed": seed}))


def load_run_config(path, seed=None) -> RunConfig:
    if path is None:
        return RunConfig().with_seed(seed)
    try:
        raw = io.read_json(path)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise InvalidInputError("config must be a JSON object")
    return RunConfig.from_dict(raw).with_seed(seed)


# -- commands --------------------------------------------------------------------

def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.module}.{r.op}  measured={r.measured:.3e}  "
              f"tol={r.tolerance:.0e}  {r.detail}")
    failed = [r for r in results if not r.passed]
    if args.out:
        io.write_json(Path(args.out) / "selftest.json",
                      {"passed": not failed, "checks": [r.to_dict() for r in results]})
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


def _ladder_rows(seed, probes, sizes):
    rows, timing = [], []
    for size in sizes:
        nv, ni = so3.GRID_LADDER[size]
        t0 = time.perf_counter()
        grid = so3.build_grid(nv, ni)
        elapsed = time.perf_counter() - t0
        rad = so3.covering_radius(grid, probes, np.random.default_rng(seed))
        rows.append({"size": size, "n_views": nv, "n_inplane": ni, "covering_radius_deg": float(np.degrees(rad))})
        timing.append({"size": size, "build_seconds": elapsed})
    return rows, timing


def cmd_sample_so3(args) -> int:
    seed = args.seed or 0
    params = {"n_views": args.n_views, "n_inplane": args.n_inplane, "probes": args.probes, "seed": seed,
              "ladder": args.ladder}
    if args.probes < 1:
        raise InvalidInputError("probes must be >= 1")
    if args.ladder:
        sizes = [s for s in sorted(so3.GRID_LADDER) if s <= args.ladder_max]
        rows, timing = _ladder_rows(seed, args.probes, sizes)
        with io.atomic_dir(args.out) as tmp:
            h = io.config_hash(params)
            io.write_csv(tmp / "ladder.csv", rows[0].keys(), rows, f"config_hash={h}")
            io.write_csv(tmp / "ladder_timing.csv", timing[0].keys(), timing, f"config_hash={h}")
        for r in rows:
            print(f"{r['size']:>9d}  {r['n_views']:>5d} x {r['n_inplane']:<4d} covering {r['covering_radius_deg']:.3f} deg")
        return EXIT_OK
    if args.n_views is None or args.n_inplane is None:
        raise InvalidInputError("give N_VIEWS and N_INPLANE, or --ladder")
    t0 = time.perf_counter()
    grid = so3.build_grid(args.n_views, args.n_inplane)
    build = time.perf_counter() - t0
    rad = so3.covering_radius(grid, args.probes, np.random.default_rng(seed))
    diag = {"size": len(grid), "n_views": grid.n_views, "n_inplane": grid.n_inplane,
            "covering_radius_deg": float(np.degrees(rad)), "probes": args.probes, "build_seconds": build,
            "config_hash": io.config_hash(params)}
    with io.atomic_dir(args.out) as tmp:
        io.save_grid(tmp / "grid.bin", grid)
        io.write_json(tmp / "diagnostics.json", diag)
    print(json.dumps(diag, indent=2))
    return EXIT_OK


def _datasets(cfg: RunConfig):
    obj = make_object(cfg.object)
    train_ds = generate_dataset(obj, cfg.data.n_train, cfg.scene, cfg.data.train_seed)
    test_ds = generate_dataset(obj, cfg.data.n_test, cfg.scene, cfg.data.test_seed)
    return train_ds, test_ds


def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    train_ds, test_ds = _datasets(cfg)
    with io.atomic_dir(args.out) as tmp:
        io.write_dataset(tmp / "train", train_ds)
        io.write_dataset(tmp / "test", test_ds)
        io.write_json(tmp / "config.json", {**cfg.to_dict(), "config_hash": io.config_hash(cfg.to_dict())})
    print(f"wrote {len(train_ds)} training and {len(test_ds)} test scenes to {args.out}")
    return EXIT_OK


def final_losses(model, dataset, config: TrainConfig) -> dict:
    """Losses over the full training set with one fixed draw of negatives."""
    rng = np.random.default_rng([config.seed, 3])
    x = model.decoder_input(dataset.observations, [s.crop for s in dataset.samples])
    negatives = so3.random_rotations(rng, config.q_train - 1)
    parts, total, _ = _step_losses(model, x, dataset.r_allo, dataset.offsets, dataset.dz, negatives, config)
    return {"L_R": parts["rot"], "L_xy": parts["xy"], "L_z": parts["z"], "total": total}


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    h = io.config_hash(cfg.to_dict())
    train_ds, test_ds = _datasets(cfg)
    model, history = train(train_ds, cfg.train)
    final = final_losses(model, train_ds, cfg.train)
    rows = history.rows + [{"epoch": "final", **final, "lr": history.rows[-1]["lr"] if history.rows else ""}]
    with io.atomic_dir(args.out) as tmp:
        io.write_checkpoint(tmp / "checkpoint", model, {"config_hash": h, "train_config": cfg.train.to_dict(),
                                                        "n_params": int(sum(a.size for a in model_arrays(model)))})
        io.write_csv(tmp / "history.csv", History.COLUMNS, rows, f"config_hash={h}")
        io.write_json(tmp / "config.json", {**cfg.to_dict(), "config_hash": h})
        io.write_dataset(tmp / "train", train_ds)
        io.write_dataset(tmp / "test", test_ds)
    print(f"final  L_R {final['L_R']:.4f}  L_xy {final['L_xy']:.4f}  L_z {final['L_z']:.4f}  total {final['total']:.4f}")
    return EXIT_OK


def _resolve_grid(arg):
    return io.load_grid(arg)


def cmd_build_library(args) -> int:
    model, meta = io.load_checkpoint(args.checkpoint)
    grid = _resolve_grid(args.grid)
    lib = build_model_library(model, grid)
    out = Path(args.out)
    io.save_library(out, lib)
    io.write_json(out.with_name(out.name + ".json"),
                  {"object_id": lib.object_id, "rows": len(lib), "dim": lib.dim,
                   "config_hash": io.config_hash({"checkpoint": meta.get("config_hash"),
                                                  "n_views": grid.n_views, "n_inplane": grid.n_inplane})})
    print(f"library {lib.object_id}: {len(lib)} x {lib.dim} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, meta = io.load_checkpoint(args.checkpoint)
    scenes = io.load_dataset(args.scenes)
    if scenes.obj.object_id != model.object_id:
        raise IncompatibleError(f"scenes are of {scenes.obj.object_id!r}, checkpoint is {model.object_id!r}")
    if args.tau <= 0:
        raise InvalidInputError("tau must be positive")
    params = {"checkpoint": meta.get("config_hash"), "scenes": scenes.meta(), "grid": args.grid,
              "tau": args.tau, "diagnostics": not args.no_diagnostics}
    h = io.config_hash(params)
    if args.grid == "ladder":
        rows, timing = [], []
        for size in (s for s in sorted(so3.GRID_LADDER) if s <= args.ladder_max):
            grid = so3.build_grid(*so3.GRID_LADDER[size])
            lib = build_model_library(model, grid)
            t0 = time.perf_counter()
            rep = evaluate(model, lib, scenes, tau=args.tau, diagnose=False)
            timing.append({"size": size, "eval_seconds": time.perf_counter() - t0})
            a = rep.aggregates
            rows.append({"size": size, "n_views": grid.n_views, "n_inplane": grid.n_inplane,
                         "rot_err_deg_median": a.get("rot_err_deg_median"),
                         "recall_rot_5deg": a.get("recall_rot_5deg"),
                         "trans_rel_median": a.get("trans_rel_median"),
                         "grid_floor_deg_median": a["grid_floor_deg_median"]})
            print(f"{size:>9d}  median {rows[-1]['rot_err_deg_median']:.3f} deg")
        with io.atomic_dir(args.out) as tmp:
            io.write_csv(tmp / "ladder.csv", rows[0].keys(), rows, f"config_hash={h}")
            io.write_csv(tmp / "ladder_timing.csv", timing[0].keys(), timing, f"config_hash={h}")
        return EXIT_OK
    grid = _resolve_grid(args.grid)
    lib = io.load_library(args.library, grid) if args.library else build_model_library(model, grid)
    report = evaluate(model, lib, scenes, tau=args.tau, diagnose=not args.no_diagnostics)
    with io.atomic_dir(args.out) as tmp:
        io.write_json(tmp / "report.json", {**report.to_dict(), "config_hash": h})
        io.write_csv(tmp / "report.csv", ("metric", "value"), report.aggregate_rows(), f"config_hash={h}")
    a = report.aggregates
    print(f"median rot {a.get('rot_err_deg_median', float('nan')):.3f} deg  "
          f"median trans {100 * a.get('trans_rel_median', float('nan')):.2f}% of t_z  "
          f"grid floor {a['grid_floor_deg_median']:.3f} deg")
    return EXIT_OK


def oracle_argmax(query, rows) -> int:
    """Brute-force float64 scan returning the first index of the largest score."""
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    best, best_i = -np.inf, -1
    for start in range(0, len(rows), 65536):
        s = np.einsum("nd,d->n", rows[start:start + 65536].astype(np.float64), q)
        i = int(np.argmax(s))
        if s[i] > best:
            best, best_i = float(s[i]), start + i
    return best_i


def bench(lib: matcher.EmbeddingLibrary, n_queries: int, batch: int, n_oracle: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    queries = rng.normal(size=(n_queries, lib.dim))
    lat = []
    t0 = time.perf_counter()
    single = np.empty(n_queries, dtype=int)
    for i, q in enumerate(queries):
        t = time.perf_counter()
        single[i] = matcher.argmax_index(q, lib)
        lat.append(time.perf_counter() - t)
    t_single = time.perf_counter() - t0
    t0 = time.perf_counter()
    batched = np.concatenate([np.atleast_1d(matcher.argmax_index(queries[s:s + batch], lib))
                              for s in range(0, n_queries, batch)])
    t_batch = time.perf_counter() - t0
    k = min(n_oracle, n_queries)
    agree = sum(oracle_argmax(queries[i], lib.rows) == single[i] for i in range(k))
    lat_ms = 1e3 * np.array(lat)
    return {"rows": len(lib), "dim": lib.dim, "queries": n_queries, "batch": batch,
            "single_qps": n_queries / t_single, "batch_qps": n_queries / t_batch,
            "latency_ms_p50": float(np.percentile(lat_ms, 50)), "latency_ms_p95": float(np.percentile(lat_ms, 95)),
            "latency_ms_p99": float(np.percentile(lat_ms, 99)),
            "oracle_checked": k, "oracle_agreement": agree / k if k else 1.0,
            "batch_matches_single": bool(np.array_equal(batched, single))}


def cmd_match_bench(args) -> int:
    if args.queries < 1 or args.batch < 1:
        raise InvalidInputError("queries and batch must be >= 1")
    if args.library == "random":
        rng = np.random.default_rng([args.seed or 0, 7])
        rows = rng.normal(size=(args.rows, args.dim)).astype(np.float32)
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        lib = matcher.EmbeddingLibrary("random", rows, so3.SO3Grid(
            np.broadcast_to(np.eye(3), (args.rows, 3, 3)), args.rows, 1))
    else:
        lib = io.load_library(args.library, _resolve_grid(args.grid)) if args.grid else io.load_library_rows(args.library)
    report = bench(lib, args.queries, args.batch, args.oracle, args.seed or 0)
    report["config_hash"] = io.config_hash({"library": str(args.library), "queries": args.queries,
                                            "batch": args.batch, "seed": args.seed or 0})
    if args.out:
        with io.atomic_dir(args.out) as tmp:
            io.write_json(tmp / "bench.json", report)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["oracle_agreement"] == 1.0 else EXIT_RUNTIME


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="symmpose", description="Symmetry-agnostic pose estimation on SO(3) grids.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("selftest", parents=[common], help="run built-in consistency checks")
    s.add_argument("--out", help="directory for selftest.json")
    s.set_defaults(func=cmd_selftest)

    s = sub.add_parser("sample-so3", parents=[common], help="build an SO(3) grid and measure its covering radius")
    s.add_argument("n_views", type=int, nargs="?")
    s.add_argument("n_inplane", type=int, nargs="?")
    s.add_argument("--out", required=True)
    s.add_argument("--probes", type=int, default=10_000)
    s.add_argument("--ladder", action="store_true", help="measure every grid size of the standard ladder")
    s.add_argument("--ladder-max", type=int, default=480_000)
    s.set_defaults(func=cmd_sample_so3)

    s = sub.add_parser("gen-data", parents=[common], help="generate training and test scenes")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train encoder and decoder")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("build-library", parents=[common], help="embed every grid rotation")
    s.add_argument("checkpoint")
    s.add_argument("grid")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_library)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on stored scenes")
    s.add_argument("checkpoint")
    s.add_argument("grid", help="grid file, or 'ladder' to sweep the standard grid sizes")
    s.add_argument("scenes")
    s.add_argument("--out", required=True)
    s.add_argument("--library", help="prebuilt library file (built from the checkpoint otherwise)")
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--no-diagnostics", action="store_true")
    s.add_argument("--ladder-max", type=int, default=480_000)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("match-bench", parents=[common], help="time library matching")
    s.add_argument("library", help="library file, or 'random' for a synthetic one")
    s.add_argument("--grid")
    s.add_argument("--queries", type=int, default=1000)
    s.add_argument("--batch", type=int, default=64)
    s.add_argument("--oracle", type=int, default=100)
    s.add_argument("--rows", type=int, default=480_000)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--out")
    s.set_defaults(func=cmd_match_bench)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (FormatError, IncompatibleError, OSError)):
        return EXIT_IO
    if isinstance(exc, (InvalidInputError, ValueError, KeyError, TypeError)):
        return EXIT_INVALID
    return EXIT_RUNTIME


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    limit = contextlib.nullcontext()
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        limit = threadpool_limits(limits=args.threads)
    try:
        with limit:
            return args.func(args)
    except (SymmposeError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
