"""Command-line front end: one reproducible run per scenario, CSV data plus a JSON sidecar.

Config files are flat ``key = value`` lines; ``#`` starts a comment. A run's
``*_metadata.json`` may itself be passed to ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import experiment as ex
from . import trajectories as tr
from . import wavefield as wf
from .errors import BohmPairError, NodeRegion, NodeStall

SCENARIOS = (
    "trajectories",
    "joint-density",
    "marginals",
    "velocity-profile",
    "weak-sim",
    "equivariance",
    "budget",
)

DEFAULT_SEED = 20120917

HEADERS = {
    "trajectories": "traj_id,t,x_a,x_b,v_a,v_b",
    "divergence": "start_id,x_a0,x_b0,phi1,phi2,divergence",
    "joint-density": "x_a,x_b,density",
    "marginals": "side,x,density",
    "velocity-profile": "x_b_center,v_hat,stderr,n_used,v_analytic",
    "weak-sim": "x_a,x_b,bin_a,bin_b,outcome,out_of_range,saturated",
    "equivariance": "x_a_center,x_b_center,p_ensemble,p_quadrature",
    "budget": "planes,bins,pairs_per_bin,pair_rate,seconds",
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _parse_int(raw) -> int:
    try:
        return int(raw)
    except ValueError:
        val = float(raw)
        if not val.is_integer():
            raise
        return int(val)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _starts(text: str) -> list[tuple[float, float]]:
    out = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        xa, xb = item.split(":")
        out.append((float(xa), float(xb)))
    return out


@dataclass
class RunConfig:
    scenario: str = "budget"
    # physics
    sigma: float = 0.1
    d: float = 1.0
    phi: float = 0.0
    kind: str = "entangled"
    # numerics
    dt: float = 0.0025
    t_end: float = 4.0
    method: str = "rk4"
    eps_node: float = wf.DEFAULT_EPS_NODE
    max_step_shrink: int = 8
    save_stride: int = 40
    t: float = 4.0
    grid_lo: float = -80.0
    grid_hi: float = 80.0
    grid_n: int = 161
    # trajectories
    starts: str = "0.5:0.5; -0.5:-0.5"
    phis: str = "0, 0.7853981633974483, 1.5707963267948966, 2.356194490192345, 3.141592653589793"
    phi1: float = 0.0
    phi2: float = math.pi
    # ensemble
    n: int = 100_000
    hist_range: float = 150.0
    hist_bins: int = 40
    # experiment
    kappa: float = 0.1
    pointer_side: str = "B"
    bins: int = 40
    x_a: float = 4.0
    pairs_per_bin: int = 1000
    max_events: int = 20_000_000
    n_events: int = 10_000
    workers: int = 1
    # budget
    planes: int = 25
    pair_rate: float = 1e6
    seed: int = DEFAULT_SEED
    out: str = "run"

    @classmethod
    def from_mapping(cls, values: dict[str, str | int | float]) -> "RunConfig":
        cfg = cls()
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(key, "unknown key")
            typ = types[key]
            try:
                if typ == "int":
                    val = _parse_int(raw)
                elif typ == "float":
                    val = float(raw)
                else:
                    val = str(raw).strip()
            except (TypeError, ValueError):
                raise ConfigError(key, f"cannot parse {raw!r} as {typ}") from None
            setattr(cfg, key, val)
        return cfg

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    # every failure names the offending key
    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"must be one of {', '.join(SCENARIOS)}")
        checks = [
            ("sigma", self.sigma > 0, "must be > 0"),
            ("d", self.d > 0, "must be > 0"),
            ("phi", 0 <= self.phi < 2 * math.pi, "must lie in [0, 2*pi)"),
            ("dt", self.dt > 0, "must be > 0"),
            ("t_end", self.t_end > 0, "must be > 0"),
            ("eps_node", self.eps_node > 0, "must be > 0"),
            ("max_step_shrink", self.max_step_shrink >= 0, "must be >= 0"),
            ("save_stride", self.save_stride >= 1, "must be >= 1"),
            ("t", self.t >= 0, "must be >= 0"),
            ("grid_hi", self.grid_hi > self.grid_lo, "must exceed grid_lo"),
            ("grid_n", self.grid_n >= 3, "must be >= 3"),
            ("n", self.n >= 1, "must be >= 1"),
            ("hist_range", self.hist_range > 0, "must be > 0"),
            ("hist_bins", self.hist_bins >= 1, "must be >= 1"),
            ("kappa", self.kappa > 0, "must be > 0"),
            ("bins", self.bins >= 1, "must be >= 1"),
            ("pairs_per_bin", self.pairs_per_bin >= 1, "must be >= 1"),
            ("max_events", self.max_events >= 1, "must be >= 1"),
            ("n_events", self.n_events >= 1, "must be >= 1"),
            ("workers", self.workers >= 1, "must be >= 1"),
            ("planes", self.planes >= 1, "must be >= 1"),
            ("pair_rate", self.pair_rate > 0, "must be > 0"),
            ("seed", 0 <= self.seed < 2**64, "must be an unsigned 64-bit integer"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, f"{msg} (got {getattr(self, key)!r})")
        try:
            wf.StateKind.parse(self.kind)
        except ValueError:
            raise ConfigError("kind", "must be 'entangled' or 'product_upper'") from None
        try:
            tr.Method(self.method)
        except ValueError:
            raise ConfigError("method", "must be 'rk4' or 'euler'") from None
        try:
            wf.Side.parse(self.pointer_side)
        except ValueError:
            raise ConfigError("pointer_side", "must be 'A' or 'B'") from None
        for key in ("phis",):
            try:
                vals = _floats(getattr(self, key))
            except ValueError:
                raise ConfigError(key, "must be a comma-separated list of numbers") from None
            if not vals:
                raise ConfigError(key, "must not be empty")
            if any(not 0 <= v < 2 * math.pi for v in vals):
                raise ConfigError(key, "every phase must lie in [0, 2*pi)")
        for key in ("phi1", "phi2"):
            if not 0 <= getattr(self, key) < 2 * math.pi:
                raise ConfigError(key, "must lie in [0, 2*pi)")
        try:
            starts = _starts(self.starts)
        except ValueError:
            raise ConfigError("starts", "expected 'x_a:x_b; x_a:x_b; ...'") from None
        if not starts:
            raise ConfigError("starts", "must not be empty")

    def state(self, phi: float | None = None) -> wf.StateConfig:
        slits = wf.SlitParams(self.sigma, self.d / 2)
        return wf.StateConfig(slits, slits, self.phi if phi is None else phi, wf.StateKind.parse(self.kind))

    def integrator(self) -> tr.IntegratorConfig:
        return tr.IntegratorConfig(self.dt, self.t_end, tr.Method(self.method), self.eps_node,
                                   self.max_step_shrink, self.save_stride)


@dataclass
class RunMetadata:
    config: dict
    seed: int
    version: str = __version__
    wall_clock_s: float = 0.0
    status: str = "ok"
    error: str | None = None
    incidents: dict = field(default_factory=lambda: {"node_stall": 0, "saturation": 0, "out_of_range": 0})
    files: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def read_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        return dict(data.get("config", data))
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _write_csv(path: Path, header: str, rows) -> None:
    with path.open("w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")


def _grid(cfg: RunConfig) -> an.Grid1D:
    return an.Grid1D(cfg.grid_lo, cfg.grid_hi, cfg.grid_n)


def _note_error(meta: RunMetadata, message: str) -> None:
    # the first failure is the headline; later ones are kept in order
    if meta.error is None:
        meta.error = message
    meta.extra.setdefault("errors", []).append(message)


def run_trajectories(cfg: RunConfig, meta: RunMetadata, prefix: str) -> int:
    ic = cfg.integrator()
    starts = _starts(cfg.starts)
    phis = _floats(cfg.phis)
    rows = []
    index = []
    status = 0
    traj_id = 0
    for phi in phis:
        c = cfg.state(phi)
        for s, x0 in enumerate(starts):
            index.append({"traj_id": traj_id, "phi": phi, "start_id": s})
            try:
                traj = tr.integrate_pair(x0, c, ic)
            except NodeStall as err:
                meta.incidents["node_stall"] += 1
                _note_error(meta, f"trajectory {traj_id}: {err}")
                status = 2
            except NodeRegion as err:
                _note_error(meta, f"trajectory {traj_id}: start {x0} {err}")
                status = 2
            else:
                for sample in traj.samples:
                    rows.append((traj_id,) + tuple(sample))
            traj_id += 1
    path = Path(f"{prefix}_trajectories.csv")
    _write_csv(path, HEADERS["trajectories"], rows)
    meta.files.append(str(path))
    meta.extra["trajectory_index"] = index

    div_rows = []
    for s, x0 in enumerate(starts):
        try:
            dv = tr.divergence_metric(x0, cfg.state(0.0), cfg.phi1, cfg.phi2, ic)
        except (NodeStall, NodeRegion) as err:
            meta.incidents["node_stall"] += isinstance(err, NodeStall)
            _note_error(meta, f"divergence start {s}: {err}")
            status = 2
            dv = math.nan
        div_rows.append((s, x0[0], x0[1], cfg.phi1, cfg.phi2, dv))
    path = Path(f"{prefix}_divergence.csv")
    _write_csv(path, HEADERS["divergence"], div_rows)
    meta.files.append(str(path))
    return status


def run_joint_density(cfg: RunConfig, meta: RunMetadata, prefix: str) -> int:
    g = _grid(cfg).points
    xa, xb = np.meshgrid(g, g, indexing="ij")
    rho = wf.joint_density(wf.SpacetimePoint(xa, xb, cfg.t), cfg.state())
    path = Path(f"{prefix}_joint_density.csv")
    _write_csv(path, HEADERS["joint-density"], zip(xa.ravel(), xb.ravel(), rho.ravel()))
    meta.files.append(str(path))
    return 0


def run_marginals(cfg: RunConfig, meta: RunMetadata, prefix: str) -> int:
    g = _grid(cfg).points
    c = cfg.state()
    rows = []
    for side in (wf.Side.A, wf.Side.B):
        rows.extend((side.value, x, p) for x, p in zip(g, wf.marginal_density(side, g, cfg.t, c)))
    path = Path(f"{prefix}_marginals.csv")
    _write_csv(path, HEADERS["marginals"], rows)
    meta.files.append(str(path))
    meta.extra["no_signaling_gap_0_pi"] = {
        s.value: an.no_signaling_gap(c, 0.0, math.pi, s, cfg.t, _grid(cfg)) for s in wf.Side
    }
    return 0


def _binning(cfg: RunConfig, c: wf.StateConfig) -> ex.BinningSpec:
    return ex.BinningSpec.covering(c, cfg.t, cfg.bins, cfg.bins, center_a=cfg.x_a)


def run_velocity_profile(cfg: RunConfig, meta: RunMetadata, prefix: str) -> int:
    pm = ex.PointerModel(cfg.kappa, cfg.pointer_side)
    # binning is fixed once (from phi = 0) so every phase shares identical bins
    bs = _binning(cfg, cfg.state(0.0))
    k = int(bs.bin_index(wf.Side.A, cfg.x_a))
    profiles = []
    for i, phi in enumerate(_floats(cfg.phis)):
        res = ex.estimate_profile(cfg.state(phi), pm, bs, k, cfg.pairs_per_bin, cfg.seed,
                                  cfg.max_events, cfg.workers)
        path = Path(f"{prefix}_profile_phi{i}.csv")
        _write_csv(path, HEADERS["velocity-profile"],
                   ((r.x_b_center, r.v_hat, r.stderr, r.n_used, r.v_analytic) for r in res.rows))
        meta.files.append(str(path))
        meta.incidents["saturation"] += res.n_saturated
        meta.incidents["out_of_range"] += res.n_out_of_range
        profiles.append({
            "phi": phi,
            "x_a_center": res.x_a_center,
            "n_events": res.n_events,
            "underfilled_bins": [u.bin_b for u in res.underfilled],
            "v_bin_avg": [r.v_bin_avg for r in res.rows],
            "typical_stderr": res.typical_stderr,
        })
    meta.extra["binning"] = {"range_a": bs.range_a, "range_b": bs.range_b, "fixed_bin_a": k}
    meta.extra["profiles"] = profiles
    return 0


def run_weak_sim(cfg: RunConfig, meta: RunMetadata, prefix: str) -> int:
    c = cfg.state()
    pm = ex.PointerModel(cfg.kappa, cfg.pointer_side)
    bs = _binning(cfg, c)
    sampler = ex.PlaneSampler(c, cfg.t)
    batches = []
    for k in range(-(-cfg.n_events // ex.EVENT_CHUNK)):
        m = min(ex.EVENT_CHUNK, cfg.n_events - k * ex.EVENT_CHUNK)
        batches.append(ex.simulate_events(c, pm, bs, tr.substream(cfg.seed, 1, k), m, sampler))
    rows = []
    for ev in batches:
        meta.incidents["saturation"] += int(ev.saturated.sum())
        meta.incidents["out_of_range"] += int(ev.out_of_range.sum())
        rows.extend(zip(ev.x_a, ev.x_b, ev.bin_a, ev.bin_b, ev.outcome,
                        ev.out_of_range.astype(int), ev.saturated.astype(int)))
    path = Path(f"{prefix}_events.csv")
    _write_csv(path, HEADERS["weak-sim"], rows)
    meta.files.append(str(path))
    return 0


def run_equivariance(cfg: RunConfig, meta: RunMetadata, prefix: str) -> int:
    c = cfg.state()
    ic = tr.IntegratorConfig(cfg.dt, cfg.t_end, tr.Method(cfg.method), cfg.eps_node,
                             cfg.max_step_shrink, save_stride=10**9)
    res = tr.integrate_ensemble(c, tr.EnsembleSpec(cfg.n, cfg.seed), ic, cfg.workers)
    meta.incidents["node_stall"] += len(res.stalls)
    done = [t for t in res.trajectories if t.complete]
    xa = np.array([t.x_a[-1] for t in done])
    xb = np.array([t.x_b[-1] for t in done])
    edges = np.linspace(-cfg.hist_range, cfg.hist_range, cfg.hist_bins + 1)
    hist = an.histogram_2d(xa, xb, edges, edges)
    quad = an.cell_probabilities(lambda a, b: wf.joint_density(wf.SpacetimePoint(a, b, cfg.t_end), c),
                                 edges, edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    rows = [(centers[i], centers[j], hist[i, j], quad[i, j])
            for i in range(len(centers)) for j in range(len(centers))]
    path = Path(f"{prefix}_equivariance.csv")
    _write_csv(path, HEADERS["equivariance"], rows)
    meta.files.append(str(path))
    meta.extra["total_variation"] = an.distribution_distance(hist, quad).value
    meta.extra["n_complete"] = len(done)
    return 0


def run_budget(cfg: RunConfig, meta: RunMetadata, prefix: str) -> int:
    b = ex.BudgetSpec(cfg.planes, cfg.bins, cfg.pairs_per_bin, cfg.pair_rate)
    seconds = ex.budget(b)
    path = Path(f"{prefix}_budget.csv")
    _write_csv(path, HEADERS["budget"], [(b.n_planes, b.n_bins, b.pairs_per_bin, b.pair_rate, seconds)])
    meta.files.append(str(path))
    meta.extra["hours"] = seconds / 3600.0
    return 0


RUNNERS = {
    "trajectories": run_trajectories,
    "joint-density": run_joint_density,
    "marginals": run_marginals,
    "velocity-profile": run_velocity_profile,
    "weak-sim": run_weak_sim,
    "equivariance": run_equivariance,
    "budget": run_budget,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bohmpair", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key = value config file, or a previous run's metadata JSON")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key (repeatable)")
    p.add_argument("--out", help="output path prefix")
    p.add_argument("--seed", help="unsigned 64-bit seed")
    p.add_argument("--scenario", help=f"one of: {', '.join(SCENARIOS)}")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    values: dict = {}
    meta = RunMetadata(config={}, seed=DEFAULT_SEED)
    prefix = args.out or "run"
    try:
        if args.config:
            values.update(read_config(args.config))
        for item in args.set:
            if "=" not in item:
                raise ConfigError(item, "--set expects KEY=VALUE")
            k, v = item.split("=", 1)
            values[k.strip()] = v.strip()
        for key in ("out", "seed", "scenario"):
            if getattr(args, key) is not None:
                values[key] = getattr(args, key)
        cfg = RunConfig.from_mapping(values)
        cfg.validate()
    except (ConfigError, OSError, json.JSONDecodeError) as err:
        meta.status = "invalid"
        meta.error = str(err)
        meta.config = values
        _finish(meta, prefix, start)
        print(f"error: {err}", file=sys.stderr)
        return 1

    prefix = cfg.out
    meta.config = cfg.to_dict()
    meta.seed = cfg.seed
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    try:
        code = RUNNERS[cfg.scenario](cfg, meta, prefix)
    except BohmPairError as err:
        meta.error = f"{type(err).__name__}: {err}"
        code = 2
    except ValueError as err:
        meta.error = str(err)
        code = 1
    if code:
        meta.status = "numerical_failure" if code == 2 else "invalid"
        print(f"error: {meta.error}", file=sys.stderr)
    _finish(meta, prefix, start)
    return code


def _finish(meta: RunMetadata, prefix: str, start: float) -> None:
    meta.wall_clock_s = time.perf_counter() - start
    path = Path(f"{prefix}_metadata.json")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(meta.__dict__, indent=2, default=_json_default) + "\n")
    except OSError as err:
        print(f"warning: could not write metadata: {err}", file=sys.stderr)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(type(obj))


if __name__ == "__main__":
    sys.exit(main())
