"""Command-line front end: scenario files, subcommands, deterministic output.

Subcommands:

    calibrate     solve the mean-zero side weights for axes marked "auto"
    solve-nu      classify the regime and solve for the growth rate
    simulate      run the particle-system ensemble, write snapshot CSVs
    front         shell-containment report and front surface (needs solve-nu
                  and simulate outputs)
    volterra      renewal-equation hit probability on a grid
    shape-export  front surface CSV only

All artifacts are written atomically under --out. Given the same scenario
file and seed the bytes are identical on every rerun, for any worker count.
Exit codes: 0 success, 1 configuration error, 2 inconclusive regime.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cbrw_sim, front_analysis
from .jump_laws import AxisTailLaw, JumpLaw, mean_axis, solve_mean_zero_weights
from .malthusian import CatalystSpec, OffspringLaw, classify_regime, solve_malthusian
from .walk_engine import WalkConfig

log = logging.getLogger("cbrw")

__all__ = ["Scenario", "ConfigError", "main"]


class ConfigError(ValueError):
    """Scenario file is malformed or inconsistent."""


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


@dataclass
class Scenario:
    """Parsed scenario file; see ``Scenario.from_dict`` for the schema."""

    dimension: int
    rate_q: float
    axes: list[dict]
    catalysts: list[dict]
    simulation: dict
    mc: dict
    front: dict
    volterra: dict
    seed: int
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        _require(isinstance(data, dict), "scenario must be a JSON object")
        for key in ("dimension", "walk", "axes", "catalysts", "seed"):
            _require(key in data, f"scenario missing required key {key!r}")
        dimension = int(data["dimension"])
        _require(dimension >= 1, "dimension must be positive")
        walk = data["walk"]
        _require("rate_q" in walk and walk["rate_q"] > 0, "walk.rate_q must be positive")
        axes = [dict(a) for a in data["axes"]]
        _require(len(axes) == dimension, "axes must list one entry per dimension")
        for i, a in enumerate(axes):
            for key in ("gamma_plus", "gamma_minus", "l2_plus", "l2_minus"):
                _require(key in a, f"axes[{i}] missing {key!r}")
                if key.startswith("gamma"):
                    _require(0 < a[key] < 1, f"axes[{i}].{key} must lie in (0, 1)")
                else:
                    _require(a[key] > 0, f"axes[{i}].{key} must be positive")
            if a.get("l1_plus") == "auto" or "l1_plus" not in a:
                a["l1_plus"] = "auto"
                a["l1_minus"] = "auto"
        catalysts = [dict(c) for c in data["catalysts"]]
        positions = []
        for i, c in enumerate(catalysts):
            for key in ("position", "beta", "alpha", "offspring"):
                _require(key in c, f"catalysts[{i}] missing {key!r}")
            _require(len(c["position"]) == dimension, f"catalysts[{i}].position dimension mismatch")
            _require(c["beta"] > 0, f"catalysts[{i}].beta must be positive")
            _require(0 <= c["alpha"] < 1, f"catalysts[{i}].alpha must lie in [0, 1)")
            positions.append(tuple(c["position"]))
        _require(len(set(positions)) == len(positions), "catalyst positions must be distinct")
        sim = dict(data.get("simulation", {}))
        snaps = sim.get("snapshot_times", [])
        _require(list(snaps) == sorted(snaps), "simulation.snapshot_times must be sorted")
        _require("seed" in data, "scenario must pin a seed (no wall-clock seeding)")
        return cls(
            dimension=dimension,
            rate_q=float(walk["rate_q"]),
            axes=axes,
            catalysts=catalysts,
            simulation=sim,
            mc=dict(data.get("mc", {})),
            front=dict(data.get("front", {})),
            volterra=dict(data.get("volterra", {})),
            seed=int(data["seed"]),
            output_dir=data.get("output_dir"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError as exc:
            raise ConfigError(f"scenario file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario file is not valid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "walk": {"rate_q": self.rate_q},
            "axes": [dict(a) for a in self.axes],
            "catalysts": [dict(c) for c in self.catalysts],
            "simulation": dict(self.simulation),
            "mc": dict(self.mc),
            "front": dict(self.front),
            "volterra": dict(self.volterra),
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    # -- domain object builders -------------------------------------------

    def resolved_axes(self) -> list[AxisTailLaw]:
        out = []
        for a in self.axes:
            if a["l1_plus"] == "auto":
                l1p, l1m = solve_mean_zero_weights(
                    a["gamma_plus"], a["gamma_minus"], a["l2_plus"], a["l2_minus"]
                )
            else:
                l1p, l1m = float(a["l1_plus"]), float(a["l1_minus"])
            out.append(
                AxisTailLaw(
                    a["gamma_plus"], a["gamma_minus"], l1p, l1m, a["l2_plus"], a["l2_minus"]
                )
            )
        return out

    def jump_law(self) -> JumpLaw:
        try:
            return JumpLaw(tuple(self.resolved_axes()))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def walk_config(self) -> WalkConfig:
        return WalkConfig(self.rate_q, self.jump_law())

    def catalyst_specs(self) -> list[CatalystSpec]:
        out = []
        for c in self.catalysts:
            out.append(
                CatalystSpec(
                    tuple(c["position"]), float(c["beta"]), float(c["alpha"]),
                    _offspring_law(c["offspring"]),
                )
            )
        return out

    def sim_config(self) -> cbrw_sim.SimConfig:
        sim = self.simulation
        _require("t_end" in sim, "simulation.t_end is required for simulate")
        return cbrw_sim.SimConfig(
            walk=self.walk_config(),
            catalysts=tuple(self.catalyst_specs()),
            start=tuple(sim.get("start", [0] * self.dimension)),
            t_end=float(sim["t_end"]),
            snapshot_times=tuple(sim.get("snapshot_times", [])),
            population_cap=int(sim.get("population_cap", 100_000)),
            seed=self.seed,
        )


def _offspring_law(spec: dict) -> OffspringLaw:
    kind = spec.get("kind", "explicit")
    if kind == "explicit":
        return OffspringLaw(np.asarray(spec["probs"], dtype=float))
    if kind == "deterministic":
        return OffspringLaw.deterministic(int(spec["k"]))
    if kind == "poisson":
        return OffspringLaw.poisson(float(spec["mean"]), int(spec.get("cap", 40)))
    if kind == "geometric":
        return OffspringLaw.geometric(float(spec["mean"]), int(spec.get("cap", 80)))
    raise ConfigError(f"unknown offspring kind {kind!r}")


# ---------------------------------------------------------------------------
# atomic file output
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(data, encoding="utf-8")
    os.replace(tmp, path)


def _write_csv(path: Path, header: list[str], rows) -> None:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    _atomic_write(path, buf.getvalue())


def _need_file(path: Path, producer: str) -> None:
    if not path.exists():
        raise ConfigError(f"missing prerequisite {path.name}; run the {producer!r} subcommand first")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_calibrate(scenario: Scenario, out_dir: Path) -> int:
    axes = scenario.resolved_axes()
    for i, (axis, raw) in enumerate(zip(axes, scenario.axes)):
        was_auto = raw["l1_plus"] == "auto"
        raw["l1_plus"] = axis.l1_plus
        raw["l1_minus"] = axis.l1_minus
        residual = mean_axis(axis)
        state = "solved" if was_auto else "kept"
        print(f"axis {i}: l1_plus={axis.l1_plus:.6f} l1_minus={axis.l1_minus:.6f} "
              f"mean_residual={residual:.3e} ({state})")
    _atomic_write(out_dir / "scenario.calibrated.json",
                  json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_solve_nu(scenario: Scenario, out_dir: Path) -> int:
    walk = scenario.walk_config()
    catalysts = scenario.catalyst_specs()
    budget = int(scenario.mc.get("budget", 10_000))
    horizon = scenario.mc.get("horizon")
    report = classify_regime(catalysts, walk, budget, scenario.seed, horizon=horizon)
    if report.regime == "supercritical":
        report = solve_malthusian(catalysts, walk, budget, scenario.seed, horizon=horizon)
    _atomic_write(out_dir / "regime_report.json", report.to_json())
    print(f"regime={report.regime} perron_at_zero={report.perron_at_zero:.6f} nu={report.nu}")
    return 2 if report.regime == "inconclusive" else 0


def _simulate_one(args: tuple) -> cbrw_sim.RunResult:
    cfg, seed = args
    return cbrw_sim.run(cbrw_sim._with_seed(cfg, seed))


def _run_ensemble(cfg: cbrw_sim.SimConfig, n_runs: int, master_seed: int, workers: int):
    seeds = [int(s) for s in cbrw_sim.ensemble_seeds(master_seed, n_runs)]
    jobs = [(cfg, s) for s in seeds]
    if workers <= 1:
        results = [_simulate_one(j) for j in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_one, jobs, chunksize=max(1, n_runs // (4 * workers))))
    return seeds, results


def cmd_simulate(scenario: Scenario, out_dir: Path, workers: int) -> int:
    cfg = scenario.sim_config()
    n_runs = int(scenario.simulation.get("n_runs", 1))
    seeds, results = _run_ensemble(cfg, n_runs, scenario.seed, workers)
    coord_names = [f"x_{i + 1}" for i in range(scenario.dimension)]

    def rows():
        for run_id, res in enumerate(results):
            for snap in res.snapshots:
                for pos in snap.positions:
                    yield [run_id, f"{snap.time:.6f}", *[int(c) for c in pos]]

    _write_csv(out_dir / "snapshots.csv", ["run_id", "time", *coord_names], rows())
    meta = {
        "config_hash": scenario.config_hash(),
        "master_seed": scenario.seed,
        "n_runs": n_runs,
        "runs": [
            {
                "run_id": i,
                "seed": seeds[i],
                "truncated": res.truncated,
                "extinct": res.extinct,
                "final_total": res.final_total,
            }
            for i, res in enumerate(results)
        ],
    }
    _atomic_write(out_dir / "run_metadata.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    n_trunc = sum(r.truncated for r in results)
    print(f"simulated {n_runs} runs ({n_trunc} truncated, "
          f"{sum(r.extinct for r in results)} extinct)")
    return 0


def _load_runs(scenario: Scenario, out_dir: Path):
    """Rebuild ensemble snapshots from the simulate artifacts."""
    _need_file(out_dir / "run_metadata.json", "simulate")
    _need_file(out_dir / "snapshots.csv", "simulate")
    meta = json.loads((out_dir / "run_metadata.json").read_text(encoding="utf-8"))
    times = [float(t) for t in scenario.simulation.get("snapshot_times", [])]
    d = scenario.dimension
    by_run: dict[int, dict[float, list]] = {
        int(r["run_id"]): {t: [] for t in times} for r in meta["runs"]
    }
    with open(out_dir / "snapshots.csv", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rid = int(row["run_id"])
            t = float(row["time"])
            by_run[rid][t].append([int(row[f"x_{i + 1}"]) for i in range(d)])
    cat_positions = [tuple(c["position"]) for c in scenario.catalysts]
    runs = []
    for rec in meta["runs"]:
        rid = int(rec["run_id"])
        snapshots = []
        for t in times:
            pts = np.asarray(by_run[rid][t], dtype=np.int64).reshape(-1, d)
            local = {
                k: int(np.all(pts == np.asarray(p), axis=1).sum()) if len(pts) else 0
                for k, p in enumerate(cat_positions)
            }
            snapshots.append(
                cbrw_sim.PopulationSnapshot(t, pts, len(pts), local, bool(rec["truncated"]))
            )
        runs.append(
            cbrw_sim.RunResult(
                snapshots=snapshots,
                extinct=bool(rec["extinct"]),
                truncated=bool(rec["truncated"]),
                extinction_time=None,
                truncation_time=None,
                final_total=int(rec["final_total"]),
                n_branch_events=0,
            )
        )
    return runs


def _front_shape(scenario: Scenario, out_dir: Path) -> front_analysis.FrontShape:
    report_path = out_dir / "regime_report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text(encoding="utf-8"))
        nu = report.get("nu")
        if nu is None:
            raise ConfigError(
                "regime report carries no growth rate (regime "
                f"{report.get('regime')!r}); front analysis needs a supercritical system"
            )
    elif "nu" in scenario.front:
        nu = float(scenario.front["nu"])
    else:
        raise ConfigError(
            "missing prerequisite regime_report.json; run the 'solve-nu' subcommand "
            "first (or set front.nu in the scenario)"
        )
    return front_analysis.FrontShape.from_law(scenario.jump_law(), float(nu))


def _export_surface(scenario: Scenario, out_dir: Path, front) -> None:
    resolution = int(scenario.front.get("surface_resolution", 32))
    points, labels = front_analysis.sample_shape_surface(front, resolution)
    coord_names = [f"z_{i + 1}" for i in range(scenario.dimension)]

    def rows():
        for pt, label in zip(points, labels):
            yield ["/".join(str(x) for x in label), *[f"{c:.9f}" for c in pt],
                   f"{front_analysis.shape_value(front, pt):.9f}"]

    _write_csv(out_dir / "shape_surface.csv", ["orthant", *coord_names, "h_value"], rows())


def cmd_front(scenario: Scenario, out_dir: Path) -> int:
    front = _front_shape(scenario, out_dir)
    law = scenario.jump_law()
    runs = _load_runs(scenario, out_dir)
    usable = [r for r in runs if not r.truncated]
    if not usable:
        raise ConfigError("all runs are truncated; raise population_cap or shorten t_end")
    eps = float(scenario.front.get("epsilon_factor", 0.3)) * front.nu
    report = front_analysis.shell_containment(usable, front, law, eps)
    _write_csv(
        out_dir / "shell_report.csv",
        ["time", "frac_outside_O", "frac_beyond_Q", "n_runs", "n_proxy_runs"],
        ([f"{t:.6f}", f"{fo:.6f}", f"{fq:.6f}", n, np_] for t, fo, fq, n, np_ in report.to_rows()),
    )
    _export_surface(scenario, out_dir, front)
    manifest = {
        "series": [
            {"label": "outer violations", "file": "shell_report.csv", "x": "time",
             "y": "frac_outside_O"},
            {"label": "inner witnesses", "file": "shell_report.csv", "x": "time",
             "y": "frac_beyond_Q"},
            {"label": "front surface", "file": "shape_surface.csv",
             "x": "z_1", "y": "z_2" if scenario.dimension > 1 else "z_1"},
        ],
        "epsilon": eps,
        "nu": front.nu,
    }
    _atomic_write(out_dir / "plot_manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"shell report over {report.n_runs} runs ({report.n_proxy_runs} proxy) at eps={eps:.4f}")
    return 0


def cmd_volterra(scenario: Scenario, out_dir: Path) -> int:
    specs = scenario.catalyst_specs()
    _require(len(specs) == 1, "volterra requires exactly one catalyst")
    vol = scenario.volterra
    for key in ("t_end", "grid_step", "target"):
        _require(key in vol, f"volterra.{key} is required")
    tgt = vol["target"]
    target = front_analysis.BoxTarget(
        tuple(float(x) if x is not None else -np.inf for x in tgt["lower"]),
        tuple(float(x) if x is not None else np.inf for x in tgt["upper"]),
    )
    result = front_analysis.volterra_hit_probability(
        specs[0],
        scenario.walk_config(),
        target,
        float(vol["t_end"]),
        float(vol["grid_step"]),
        int(scenario.mc.get("budget", 10_000)),
        scenario.seed,
    )
    _write_csv(
        out_dir / "volterra.csv",
        ["time", "estimate", "mc_band", "grid_diff"],
        ([f"{t:.6f}", f"{e:.8f}", f"{b:.8f}", f"{g:.8f}"] for t, e, b, g in result.to_rows()),
    )
    print(f"volterra solved on {len(result.grid)} grid points")
    return 0


def cmd_shape_export(scenario: Scenario, out_dir: Path) -> int:
    front = _front_shape(scenario, out_dir)
    _export_surface(scenario, out_dir, front)
    print("surface exported")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbrw",
        description="Catalytic branching random walk laboratory",
    )
    parser.add_argument("--scenario", required=True, help="path to the scenario JSON file")
    parser.add_argument("--out", default=None, help="output directory (default: scenario output_dir or '.')")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for ensembles")
    parser.add_argument("--budget", type=int, default=None, help="override mc.budget")
    parser.add_argument(
        "command",
        choices=["calibrate", "solve-nu", "simulate", "front", "volterra", "shape-export"],
    )
    return parser


def run_command(argv: list[str] | None = None) -> int:
    level = os.environ.get("CBRW_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = _build_parser().parse_args(argv)
    try:
        scenario = Scenario.load(args.scenario)
        if args.seed is not None:
            scenario.seed = args.seed
        if args.budget is not None:
            scenario.mc["budget"] = args.budget
        out_dir = Path(args.out or scenario.output_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "calibrate":
            return cmd_calibrate(scenario, out_dir)
        if args.command == "solve-nu":
            return cmd_solve_nu(scenario, out_dir)
        if args.command == "simulate":
            return cmd_simulate(scenario, out_dir, args.workers)
        if args.command == "front":
            return cmd_front(scenario, out_dir)
        if args.command == "volterra":
            return cmd_volterra(scenario, out_dir)
        if args.command == "shape-export":
            return cmd_shape_export(scenario, out_dir)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())
