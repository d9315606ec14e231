"""Batch runner: ``qtraj <subcommand> [--preset figN] [--config PATH] ...``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.  On
failure a one-line JSON error record goes to stderr (and to ``error.json``
in the output directory when it exists).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import classical as cl
from . import experiments as ex
from . import io
from .config import ConfigError, ExperimentConfig, apply_overrides, dumps, loads, preset
from .gaussian import CovarianceError
from .lyapunov import LyapunovError
from .noise import GENERATOR_ID, spawn_seeds
from .sse import COLUMNS, GridError

log = logging.getLogger("qtraj")

SUBCOMMANDS = {
    "classical": "classical",
    "sse": "sse",
    "gaussian": "gaussian",
    "poincare": "poincare",
    "lyapunov": "lyapunov",
    "compare": "closure-compare",
}
NUMERICAL = (GridError, CovarianceError, LyapunovError, FloatingPointError, np.linalg.LinAlgError)


class NumericalFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are configuration errors: exit 2 with a JSON record
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qtraj", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"qtraj {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run a {SUBCOMMANDS[name]} experiment")
        sp.add_argument("--config", type=Path, help="key = value file")
        sp.add_argument("--preset", help="fig1 .. fig5, or closure")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit master seed")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--workers", type=int, help="parallel ensemble workers")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> ExperimentConfig:
    cfg = preset(args.preset) if args.preset else ExperimentConfig()
    if args.config:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        cfg = loads(text, cfg)
    pairs = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, _, v = item.partition("=")
        pairs[k.strip()] = v
    apply_overrides(cfg, pairs)
    cfg.kind = SUBCOMMANDS[args.command]
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.workers is not None:
        cfg.run.workers = args.workers
    if args.out is not None:
        cfg.run.out = str(args.out)
    return cfg.validate()


def output_dir(cfg: ExperimentConfig) -> Path:
    if cfg.run.out:
        return Path(cfg.run.out)
    root = Path(os.environ.get("QTRAJ_OUT", "qtraj_out"))
    tag = cfg.run.label or cfg.preset or "custom"
    return root / f"{cfg.kind}-{tag}-seed{cfg.run.seed}"


# -- per-kind writers --------------------------------------------------------------

def _classical_refs(cfg: ExperimentConfig, out: Path) -> list[str]:
    cp = cfg.classical_params()
    names = []
    for i, traj in enumerate(ex.classical_runs(cfg)):
        name = f"classical_{i}.csv"
        io.write_csv(out / name, list(ex.TRAJ_COLUMNS), ex.classical_rows(traj, cp))
        names.append(name)
    return names


def run_classical(cfg, out):
    return {"files": _classical_refs(cfg, out), "scheme": "rk4"}


def run_sse(cfg, out):
    p = cfg.params()
    summary = []
    for i, (traj, stream) in enumerate(ex.sse_runs(cfg, cfg.run.seed)):
        io.write_csv(out / f"trajectory_{i}.csv", list(COLUMNS), traj.rows)
        pops = traj.meta.get("populations")
        if pops is not None:
            cols = ["tau"] + [f"branch_{j}" for j in range(pops.shape[1])]
            io.write_csv(out / f"populations_{i}.csv", cols, np.column_stack([traj.col("tau"), pops]))
        summary.append({"noise": stream.describe(), "discarded": traj.meta["discarded"],
                        "final_populations": None if pops is None else pops[-1]})
    _classical_refs(cfg, out)
    n = cfg.numerics
    grid = {"n": n.n_grid, "span": n.grid_span_zg * p.zg, "regrid_every": n.regrid_every}
    return {"scheme": "strang-split-cayley", "grid": grid, "trajectories": summary}


def run_gaussian(cfg, out):
    summary = []
    for i, (traj, stream) in enumerate(ex.gaussian_runs(cfg, cfg.run.seed)):
        io.write_csv(out / f"trajectory_{i}.csv", list(COLUMNS), traj.rows)
        m = ex.summarize_motion(traj, cfg)
        summary.append({"noise": stream.describe(), "max_czz_over_zg2": m.max_czz, "extent_ratio": m.extent_ratio})
    _classical_refs(cfg, out)
    return {"scheme": cfg.numerics.scheme, "trajectories": summary}


def _section_view(cfg, rows: np.ndarray, lead: list[str]) -> np.ndarray:
    idx = [ex.SECTION_COLUMNS.index(a) for a in cfg.section.axes]
    k = len(lead)
    return np.column_stack([rows[:, :k], rows[:, [k + i for i in idx]]])


def run_poincare(cfg, out):
    cp = cfg.classical_params()
    E = cfg.absolute_energy()
    if cfg.section.orbit_guesses:
        st = ex.island_study(cfg, cfg.run.seed)
        crow = np.vstack([np.column_stack([np.full(len(r), k), r]) for k, r in enumerate(st.classical_sections)])
        qrow = np.vstack([np.column_stack([np.full(len(r), k), r]) for k, r in enumerate(st.quantum_sections)])
        lead = ["orbit"]
        io.write_csv(out / "section_classical.csv", lead + list(ex.SECTION_COLUMNS), crow)
        io.write_csv(out / "section_quantum.csv", lead + list(ex.SECTION_COLUMNS), qrow)
        io.write_csv(out / "section_classical_view.csv", lead + list(cfg.section.axes), _section_view(cfg, crow, lead))
        io.write_csv(out / "section_quantum_view.csv", lead + list(cfg.section.axes), _section_view(cfg, qrow, lead))
        isl = [[isl.orbit, isl.member, st.orbits[isl.orbit].period, *isl.center, st.orbits[isl.orbit].trace,
                st.p90[isl.orbit]] for isl in st.islands]
        io.write_csv(out / "islands.csv", ["orbit", "member", "period", "z", "p", "trace", "quantum_p90"], isl)
        return {"energy_absolute": E, "islands": len(st.islands), "hulls_disjoint": st.hulls_disjoint,
                "gap": st.gap, "quantum_p90": st.p90, "scheme": "rk4+gaussian-" + cfg.numerics.scheme}
    # no orbits requested: sections of the configured initial conditions
    rows = []
    for i, (z0, p0) in enumerate(cfg.initial_conditions()):
        sec = cl.poincare_array(ex.classical_initial(cfg, z0, p0), cfg.section.tau_max, cfg.numerics.dtau, cp)
        rows.append(np.column_stack([np.full(len(sec), i), sec]))
    rows = np.vstack(rows)
    io.write_csv(out / "section_classical.csv", ["traj"] + list(ex.SECTION_COLUMNS), rows)
    io.write_csv(out / "section_classical_view.csv", ["traj"] + list(cfg.section.axes), _section_view(cfg, rows, ["traj"]))
    return {"scheme": "rk4"}


def run_lyapunov(cfg, out):
    res = {}
    for name, dist in ex.lyapunov_study(cfg).items():
        N = cfg.lyapunov.quantum_N if name == "gaussian" else cfg.lyapunov.N
        rows = [[i, s, lam, N, int(c)] for i, (s, lam, c) in enumerate(zip(dist.seeds, dist.samples, dist.converged))]
        # seeds are 64-bit: keep them exact by writing this table as text
        path = out / f"samples_{name}.csv"
        with open(path, "w") as fh:
            fh.write("fiducial,seed,lambda,N,converged\n")
            for i, s, lam, n_, c in rows:
                fh.write(f"{i},{s},{lam:.17g},{n_},{c}\n")
        edges, counts = dist.hist_edges, dist.hist_counts
        io.write_csv(out / f"histogram_{name}.csv", ["bin_lo", "bin_hi", "count"],
                     np.column_stack([edges[:-1], edges[1:], counts]))
        res[name] = {"mean": float(dist.samples.mean()), "std": float(dist.samples.std()),
                     "converged_fraction": float(dist.converged.mean()), "seed_scheme": dist.meta["seed_scheme"]}
    return {"distributions": res, "scheme": "benettin"}


def run_compare(cfg, out):
    rep = ex.closure_compare(cfg, cfg.run.seed)
    io.write_csv(out / "compare.csv", list(ex.COMPARE_COLUMNS), rep.rows())
    return {"rms_means_fraction": rep.rms_means, "czz_rms_rel": rep.czz_rms_rel, "breakdown": rep.breakdown,
            "scale": rep.scale, **rep.meta}


RUNNERS = {
    "classical": run_classical,
    "sse": run_sse,
    "gaussian": run_gaussian,
    "poincare": run_poincare,
    "lyapunov": run_lyapunov,
    "closure-compare": run_compare,
}


def prepare_output(out: Path) -> None:
    """Create ``out``; files of an earlier run (as listed by its metadata) are replaced.

    A non-empty directory without a metadata record is refused rather than
    mixed with foreign files.
    """
    out.mkdir(parents=True, exist_ok=True)
    meta = out / io.METADATA_NAME
    if meta.exists():
        previous = json.loads(meta.read_text()).get("checksums", {})
        for name in list(previous) + [io.METADATA_NAME, "error.json", "config.txt"]:
            (out / name).unlink(missing_ok=True)
    elif any(p.name != "error.json" for p in out.iterdir()):
        raise ConfigError(f"output directory {out} is not empty and holds no earlier run")


def run(cfg: ExperimentConfig, out: Path) -> dict:
    prepare_output(out)
    (out / "config.txt").write_text(dumps(cfg))
    t0 = time.time()
    try:
        results = RUNNERS[cfg.kind](cfg, out)
    except NUMERICAL as exc:
        raise NumericalFailure(f"{type(exc).__name__}: {exc}") from exc
    record = {
        "kind": cfg.kind,
        "preset": cfg.preset,
        "params": cfg.params().to_dict(),
        "seed": cfg.run.seed,
        "generator": GENERATOR_ID,
        "seed_children": spawn_seeds(cfg.run.seed, len(cfg.initial.z0)),
        "dt": cfg.numerics.dt,
        "dtau": cfg.numerics.dtau,
        "grid": {"n": cfg.numerics.n_grid, "span_zg": cfg.numerics.grid_span_zg},
        "scheme": results.pop("scheme", None),
        "config": dumps(cfg),
        "results": results,
        "wall_seconds": round(time.time() - t0, 3),
    }
    io.write_metadata(out, record)
    return record


def _fail(code: int, kind: str, message: str, out: Path | None) -> int:
    rec = {"status": "error", "error": kind, "exit_code": code, "message": message}
    line = json.dumps(rec)
    print(line, file=sys.stderr)
    if out is not None and out.is_dir():
        (out / "error.json").write_text(line + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        return _fail(2, "invalid_config", str(exc), None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = None
    try:
        cfg = resolve_config(args)
        out = output_dir(cfg)
        if args.dry_run:
            sys.stdout.write(dumps(cfg))
            return 0
        run(cfg, out)
    except ConfigError as exc:
        return _fail(2, "invalid_config", str(exc), out)
    except NumericalFailure as exc:
        return _fail(3, "numerical_failure", str(exc), out)
    print(str(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
