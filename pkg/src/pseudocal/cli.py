"""Batch experiment runner: ``pcl <experiment> [flags]``.

Every experiment writes JSON lines: one record per trial, then a summary.
Records echo the full config, the trial seed and a run id derived from the
config, so identical configs produce identical bytes. Wall times go to a
sidecar file ``<out>.time.jsonl`` to keep the main stream reproducible.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Callable, Iterator, Sequence

from . import __version__
from .errors import ConfigError, GuardError, InvariantViolation
from .graphcore import derive_seed, sample_null
from .pseudomoments import PEParams

EXPERIMENTS = ("constraints", "calibration", "factor-identity", "recursion-step", "norm-scaling",
               "fk-gap", "fk-square", "concentration", "spectra")
EXIT_OK, EXIT_INVARIANT, EXIT_GUARD, EXIT_CONFIG = 0, 2, 3, 4

SHAPES = {"edge": "single_edge", "path": "two_path", "loop": "diagonal_edge"}


@dataclass
class RunConfig:
    experiment: str
    n: int = 20
    omega_exp: float | None = None
    omega: str | None = None
    d: int = 2
    tau: int = 4
    seed: int = 0
    trials: int = 10
    mode: str = "exact"
    out: str | None = None
    backend: str = "calibrated"
    ell: int = 1
    eigen: bool = True
    shape: str = "edge"
    n_grid: list = field(default_factory=lambda: [20, 40, 80, 160])
    exponents: list = field(default_factory=lambda: [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    template: list = field(default_factory=lambda: [[0, 1], [1, 2], [0, 2]])
    sizes: list = field(default_factory=lambda: [0, 1, 2, 3])

    def params(self) -> PEParams:
        if self.omega is not None:
            return PEParams(self.n, Fraction(self.omega), self.d, self.tau)
        if self.omega_exp is None:
            raise ConfigError("set either omega or omega_exp")
        return PEParams.from_exponent(self.n, self.omega_exp, self.d, self.tau)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.mode not in ("exact", "float"):
            raise ConfigError("mode must be exact or float")
        if self.trials < 1 or self.n < 1:
            raise ConfigError("n and trials must be positive")
        if self.shape not in SHAPES:
            raise ConfigError(f"shape must be one of {sorted(SHAPES)}")

    def to_record(self) -> dict:
        rec = asdict(self)
        rec.pop("out")
        return rec

    @property
    def run_id(self) -> str:
        blob = json.dumps(self.to_record(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


# -- serialization -------------------------------------------------------------

def _plain(value, mode: str = "exact"):
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, Fraction):
        if mode == "float":
            return float(value)
        return f"{value.numerator}/{value.denominator}" if value.denominator != 1 else str(value.numerator)
    if isinstance(value, float):
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, dict):
        return {str(k): _plain(v, mode) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v, mode) for v in value]
    if hasattr(value, "item"):
        return _plain(value.item(), mode)
    return value


def emit_csv(records: Sequence[dict], stream=None) -> str:
    """Flatten homogeneous records to CSV; rationals stay ``p/q`` strings, nested values become JSON."""
    if not records:
        raise ConfigError("no records to export")
    keys = list(records[0])
    for rec in records[1:]:
        if list(rec) != keys:
            raise ConfigError("records have mixed schemas")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for rec in records:
        row = []
        for k in keys:
            v = _plain(rec[k])
            row.append(json.dumps(v, sort_keys=True) if isinstance(v, (dict, list)) else v)
        w.writerow(row)
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


# -- experiments ---------------------------------------------------------------

Trial = Iterator[dict]


def _trial_seeds(cfg: RunConfig) -> list[int]:
    return [derive_seed(cfg.seed, t) for t in range(cfg.trials)]


def _constraints(cfg: RunConfig, summary: dict) -> Trial:
    from .verify import check_constraints

    p = cfg.params()
    ok = 0
    for t, s in enumerate(_trial_seeds(cfg)):
        rep = check_constraints(sample_null(cfg.n, s), p, cfg.backend, eigen=cfg.eigen, seed=s)
        if rep.clique_zero_violations:
            summary["invariant_violated"] = True
        ok += bool(rep.psd)
        yield {"trial": t, "seed": s, **rep.to_record()}
    summary.update(psd_trials=ok)


def _calibration(cfg: RunConfig, summary: dict) -> Trial:
    from .verify import calibration_average

    p = PEParams(cfg.n, cfg.params().omega, min(cfg.d, cfg.n), cfg.n)
    for k in cfg.sizes:
        if k > cfg.n:
            continue
        S = tuple(range(k))
        avg = calibration_average(p, S)
        target = p.q**k
        if avg != target:
            summary["invariant_violated"] = True
        yield {"trial": k, "seed": None, "S": list(S), "average": avg, "target": target, "equal": avg == target}


def _graphs(cfg: RunConfig):
    return [(t, s, sample_null(cfg.n, s)) for t, s in enumerate(_trial_seeds(cfg))]


def _factor_identity(cfg: RunConfig, summary: dict) -> Trial:
    from .factorlab import verify_factor_identity

    p = cfg.params()
    worst = "0"
    for t, s, G in _graphs(cfg):
        rep = verify_factor_identity([G], p)
        rep.pop("elapsed")
        if rep["max_abs_residual"] != "0" or rep.get("moment_matrix_mismatches"):
            summary["invariant_violated"] = True
            worst = rep["max_abs_residual"]
        yield {"trial": t, "seed": s, **rep}
    summary["max_abs_residual"] = worst


def _recursion_step(cfg: RunConfig, summary: dict) -> Trial:
    from .factorlab import RecursionStep, _catalog, c0

    p = cfg.params()
    step = RecursionStep(c0(), p.n, p.d, p.tau, catalog=_catalog(p))
    summary.update(triple_types=len(step.types), gamma_mismatches=len(step.mismatches))
    if step.mismatches:
        summary["invariant_violated"] = True
    for t, s, G in _graphs(cfg):
        zero = step.residual(G).is_zero()
        if not zero:
            summary["invariant_violated"] = True
        yield {"trial": t, "seed": s, "residual_zero": zero}


def _norm_scaling(cfg: RunConfig, summary: dict) -> Trial:
    from . import shapes

    U = getattr(shapes, SHAPES[cfg.shape])()
    res = shapes.norm_scaling_experiment(U, cfg.n_grid, cfg.trials, cfg.seed)
    yield from res["records"]
    summary.update(shape_id=U.shape_id, slope=res["slope"], predicted=res["predicted"])


def _fk_gap(cfg: RunConfig, summary: dict) -> Trial:
    from .verify import fk_calibration_gap

    res = fk_calibration_gap(cfg.n, cfg.exponents, cfg.ell, cfg.trials, cfg.seed)
    yield from res.pop("records")
    summary.update(res)


def _fk_square(cfg: RunConfig, summary: dict) -> Trial:
    from .verify import fk_negativity_witness

    omega = cfg.params().omega
    negative = 0
    for t, s in enumerate(_trial_seeds(cfg)):
        res = fk_negativity_witness(cfg.n, omega, 2, seed=s)
        negative += res["negative"]
        for rec in res["curve"]:
            yield {"trial": t, "seed": s, **rec}
    summary.update(negative_trials=negative)


def _concentration(cfg: RunConfig, summary: dict) -> Trial:
    from .verify import orbit_sum, template_shape

    edges = [tuple(e) for e in cfg.template]
    t_vert = template_shape(edges).t
    s_bound = cfg.n ** (t_vert / 2) * math.log(cfg.n) ** (3 * t_vert)
    ok = 0
    for t, s, G in _graphs(cfg):
        v = orbit_sum(edges, G)
        ok += abs(v) <= s_bound
        yield {"trial": t, "seed": s, "sum": v, "within": abs(v) <= s_bound}
    summary.update(threshold=s_bound, pass_rate=ok / cfg.trials)


def _spectra(cfg: RunConfig, summary: dict) -> Trial:
    from .factorlab import spectral_report

    p = cfg.params()
    for t, s, G in _graphs(cfg):
        rep = spectral_report(G, p)
        rep.pop("elapsed")
        yield {"trial": t, "seed": s, **rep}


RUNNERS: dict[str, Callable[[RunConfig, dict], Trial]] = {
    "constraints": _constraints, "calibration": _calibration, "factor-identity": _factor_identity,
    "recursion-step": _recursion_step, "norm-scaling": _norm_scaling, "fk-gap": _fk_gap,
    "fk-square": _fk_square, "concentration": _concentration, "spectra": _spectra,
}


def run(cfg: RunConfig, out=None, timing=None) -> int:
    """Run one experiment, writing JSON lines to ``out``; returns the exit status."""
    cfg.validate()
    base = {"run_id": cfg.run_id, "version": __version__, "config": cfg.to_record()}
    summary: dict = {"invariant_violated": False}
    count = 0
    start = last = time.perf_counter()
    for rec in RUNNERS[cfg.experiment](cfg, summary):
        line = {"kind": "trial", **base, **_plain(rec, cfg.mode)}
        out.write(json.dumps(line, sort_keys=True) + "\n")
        now = time.perf_counter()
        if timing is not None:
            timing.write(json.dumps({"run_id": cfg.run_id, "record": count, "wall_time": round(now - last, 6)}) + "\n")
        last = now
        count += 1
    summary["records"] = count
    out.write(json.dumps({"kind": "summary", **base, **_plain(summary, cfg.mode)}, sort_keys=True) + "\n")
    if timing is not None:
        timing.write(json.dumps({"run_id": cfg.run_id, "record": "summary",
                                 "wall_time": round(time.perf_counter() - start, 6)}) + "\n")
    return EXIT_INVARIANT if summary["invariant_violated"] else EXIT_OK


# -- argument handling -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pcl", description="Run a pseudo-calibration experiment.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="JSON file with default values for any flag")
    ap.add_argument("--n", type=int)
    ap.add_argument("--omega-exp", type=float, dest="omega_exp")
    ap.add_argument("--omega", help="rational clique-size parameter, e.g. 3/2")
    ap.add_argument("--d", type=int)
    ap.add_argument("--tau", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--mode", choices=("exact", "float"))
    ap.add_argument("--out", help="output path (default: stdout)")
    ap.add_argument("--backend", choices=("calibrated", "fk"))
    ap.add_argument("--ell", type=int)
    ap.add_argument("--shape", choices=sorted(SHAPES))
    ap.add_argument("--n-grid", type=int, nargs="+", dest="n_grid")
    ap.add_argument("--exponents", type=float, nargs="+")
    ap.add_argument("--no-eigen", action="store_false", dest="eigen", default=None)
    return ap


def load_config(argv: Sequence[str]) -> RunConfig:
    args = vars(_parser().parse_args(argv))
    base: dict = {}
    if args.get("config"):
        try:
            with open(args["config"]) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(base) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    merged = {**base, **{k: v for k, v in args.items() if v is not None and k in known}}
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = load_config(argv)
        if cfg.out:
            with open(cfg.out, "w") as out, open(cfg.out + ".time.jsonl", "w") as timing:
                return run(cfg, out, timing)
        return run(cfg, sys.stdout)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GuardError as exc:
        print(f"guard refusal: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
