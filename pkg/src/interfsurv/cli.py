"""Command-line interface: simulate, fit, ucb and reproduce.

Settings come from an optional JSON config file; command-line flags
override it.  Results go to ``--out`` (``-`` for standard output) as CSV
with a JSON sidecar of run metadata, or as one JSON document.  Progress
lines go to standard error.

Exit codes: 0 success, 2 usage error, bad config or missing input file,
3 package error (schema, folds, inference), 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import reproduce as rp
from .data import load_dataset, save_dataset
from .engine import sbs_estimate
from .errors import InterfSurvError
from .estimands import KINDS, RMST, EstimandSpec, RiskAt
from .inference import interference_test, ucb_critical_value
from .nuisance.bundle import LearnerConfig
from .policies import make_policy
from .simulator import DgpConfig, Fixed, NegBinomial, UniformRange, generate_dataset

FIT_COLUMNS = ("estimand", "policy", "theta", "theta_ref", "transform", "tau", "point", "se",
               "ci_lo", "ci_hi", "m", "K", "S", "r")
UCB_COLUMNS = FIT_COLUMNS + ("ucb_lo", "ucb_hi", "critical", "band", "interference_test")
REPRODUCE_COLUMNS = ("target", "estimand", "theta", "theta_ref", "tau", "truth", "truth_alt",
                     "bias", "bias_mcse", "ase", "ese", "cov", "cov_mcse", "ucov", "D", "m",
                     "ref_truth", "ref_bias", "ref_ase", "ref_ese", "ref_cov", "ref_ucov")
REFERENCE_THETA = {"tpb": 0.0, "cips": 1.0}
LEARNERS = {
    "forest": ("logistic_penalized", "survival_forest"),
    "pooled": ("logistic_penalized", "discrete_hazard_logistic"),
    "oracle": ("oracle", "oracle"),
}


class UsageError(Exception):
    """Bad flags or config values (exit code 2)."""


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    command: str = "fit"
    data: str | None = None
    dgp: dict = field(default_factory=dict)
    estimands: list = field(default_factory=lambda: list(KINDS))
    policy: str = "typeb"
    theta: list = field(default_factory=lambda: [0.3, 0.45, 0.6])
    theta_ref: float | None = None
    tau: list = field(default_factory=lambda: [0.2, 0.4])
    transform: str = "risk"
    K: int = 2
    S: int = 1
    r: int = 100
    B: int = 2000
    level: float = 0.95
    seed: int = 0
    learner: object = "forest"
    band: str = "theta"
    out: str = "-"
    format: str = "csv"
    jobs: int = 1
    m: int | None = None
    D: int = 200
    target: str = "table3"
    truth_out: str | None = None
    truth_mc: int = 100000

    def validate(self):
        for name in ("estimands", "theta", "tau"):
            if not getattr(self, name):
                raise UsageError(f"{name} grid is empty")
        bad = [k for k in self.estimands if k not in KINDS]
        if bad:
            raise UsageError(f"unknown estimand(s) {', '.join(bad)}")
        if self.K < 2 or self.r < 1 or self.S < 1:
            raise UsageError("need K >= 2, r >= 1 and S >= 1")
        if self.B < 100:
            raise UsageError("B must be at least 100")
        if not 0 < self.level < 1:
            raise UsageError("level must lie in (0, 1)")
        if self.transform not in ("risk", "rmst"):
            raise UsageError("transform must be 'risk' or 'rmst'")
        if self.format not in ("csv", "json", "jsonl"):
            raise UsageError("format must be csv or json (jsonl for simulate)")
        if self.band not in ("theta", "tau_theta"):
            raise UsageError("band must be 'theta' or 'tau_theta'")
        if self.target not in rp.TARGETS:
            raise UsageError(f"target must be one of {', '.join(rp.TARGETS)}")
        if self.jobs < 1 or self.D < 1:
            raise UsageError("jobs and D must be >= 1")
        return self


_SIZE_DISTS = {"uniform": UniformRange, "negbin": NegBinomial, "fixed": Fixed}


def dgp_from_dict(d: dict) -> DgpConfig:
    """DgpConfig from a plain dict; ``n_dist`` is {"kind": uniform|negbin|fixed, ...}."""
    d = dict(d)
    known = {f.name for f in fields(DgpConfig)}
    unknown = set(d) - known
    if unknown:
        raise UsageError(f"unknown dgp key(s): {', '.join(sorted(unknown))}")
    if "n_dist" in d:
        nd = dict(d["n_dist"])
        kind = nd.pop("kind", "uniform")
        if kind not in _SIZE_DISTS:
            raise UsageError(f"unknown n_dist kind {kind!r}")
        d["n_dist"] = _SIZE_DISTS[kind](**nd)
    for k in ("treat_coef", "event_coef", "censor_coef"):
        if k in d:
            d[k] = tuple(d[k])
    try:
        return DgpConfig(**d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad dgp config: {e}") from None


def learner_config(spec, dgp: DgpConfig) -> LearnerConfig:
    """``spec`` is a preset name (forest, pooled, oracle) or a LearnerConfig-style dict."""
    if isinstance(spec, str):
        if spec not in LEARNERS:
            raise UsageError(f"learner must be one of {', '.join(LEARNERS)} or a dict")
        prop, surv = LEARNERS[spec]
        spec = {"propensity": prop, "survival": surv}
    spec = dict(spec)
    known = {"propensity", "survival", "propensity_params", "survival_params", "censor_params"}
    if set(spec) - known:
        raise UsageError(f"unknown learner key(s): {', '.join(sorted(set(spec) - known))}")
    cfg = LearnerConfig(**spec)
    if "oracle" in (cfg.propensity, cfg.survival):
        cfg = replace(cfg, dgp=dgp)
        if cfg.is_oracle:
            from .nuisance.bundle import NO_FLOORS
            cfg = replace(cfg, floors=NO_FLOORS)
    return cfg


def _number_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"expected a list of numbers, got {text!r}") from None


def build_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(str(path))
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
        if not isinstance(raw, dict):
            raise UsageError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    cfg = RunConfig(**{**raw, "command": args.command})
    for name in known - {"command"}:
        val = getattr(args, name, None)
        if val is None:
            continue
        if name in ("theta", "tau"):
            val = _number_list(val)
        elif name == "estimands":
            val = [v.strip().lower() for v in val.split(",") if v.strip()]
        setattr(cfg, name, val)
    cfg.policy = cfg.policy.lower()
    cfg.theta = [float(v) for v in cfg.theta]
    cfg.tau = [float(v) for v in cfg.tau]
    return cfg.validate()


def reference_theta(cfg: RunConfig) -> float:
    """Reference policy of contrasts: the factual policy for TPB (rho = 0) and
    CIPS (delta = 1); for Type B, the median of the theta grid."""
    if cfg.theta_ref is not None:
        return float(cfg.theta_ref)
    if cfg.policy in REFERENCE_THETA:
        return REFERENCE_THETA[cfg.policy]
    return float(np.median(cfg.theta))


def make_transform(kind: str, tau: float):
    return RiskAt(tau) if kind == "risk" else RMST(tau)


def build_specs(cfg: RunConfig) -> list[EstimandSpec]:
    """Specs ordered by tau, then theta, then estimand."""
    ref = make_policy(cfg.policy, reference_theta(cfg))
    specs = []
    for tau in cfg.tau:
        tr = make_transform(cfg.transform, tau)
        for th in cfg.theta:
            pol = make_policy(cfg.policy, th)
            for k in cfg.estimands:
                two = k in ("se1", "se0", "oe")
                specs.append(EstimandSpec(k, tr, pol, ref if two else None))
    return specs


# ---------------------------------------------------------------------------
# output

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    return str(v)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def config_echo(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d.pop("out", None)
    return d


def write_results(cfg: RunConfig, columns, rows, meta: dict) -> None:
    """Rows to ``cfg.out``; CSV carries the config in a leading comment line
    and gets a ``.meta.json`` sidecar unless written to standard output."""
    echo = json.dumps(config_echo(cfg), sort_keys=True, separators=(",", ":"))
    if cfg.format == "json":
        doc = {"config": config_echo(cfg), "meta": meta, "columns": list(columns),
               "rows": [{c: _json_value(r.get(c)) for c in columns} for r in rows]}
        text = json.dumps(doc, indent=1, sort_keys=False) + "\n"
    else:
        buf = io.StringIO()
        buf.write(f"# config: {echo}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])
        text = buf.getvalue()
    if cfg.out == "-":
        sys.stdout.write(text)
        return
    Path(cfg.out).write_text(text)
    if cfg.format == "csv":
        sidecar = {"config": config_echo(cfg), "meta": meta, "columns": list(columns)}
        Path(cfg.out + ".meta.json").write_text(json.dumps(sidecar, indent=1) + "\n")


def _log(msg: str) -> None:
    print(f"[interfsurv] {msg}", file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# commands

def run_simulate(cfg: RunConfig) -> int:
    dgp = dgp_from_dict(cfg.dgp)
    if cfg.out == "-":
        raise UsageError("simulate needs --out PATH")
    fmt = "jsonl" if cfg.format in ("json", "jsonl") else "csv"
    ds, hidden = generate_dataset(dgp, cfg.seed, cfg.m)
    save_dataset(ds, cfg.out, fmt)
    _log(f"wrote {ds.m} clusters, {ds.n_units} units to {cfg.out} (seed {cfg.seed})")
    if cfg.truth_out:
        with open(cfg.truth_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cluster_id", "unit_id", "T", "C", "b"])
            u = 0
            for i, c in enumerate(ds.clusters):
                for j in range(c.n):
                    w.writerow([c.cluster_id, j + 1, _cell(hidden.t[u]), _cell(hidden.c[u]),
                                _cell(hidden.b[i])])
                    u += 1
        _log(f"wrote hidden truth to {cfg.truth_out}")
    return 0


def _fit_common(cfg: RunConfig):
    if not cfg.data:
        raise UsageError("--data is required")
    ds = load_dataset(cfg.data)
    dgp = dgp_from_dict(cfg.dgp)
    learners = learner_config(cfg.learner, dgp)
    specs = build_specs(cfg)
    _log(f"loaded {ds.m} clusters, {ds.n_units} units from {cfg.data}")
    _log(f"seed {cfg.seed}; K={cfg.K} S={cfg.S} r={cfg.r}; {len(specs)} estimands")
    t0 = time.perf_counter()
    results, tables = sbs_estimate(ds, specs, cfg.K, cfg.S, cfg.r, learners, seed=cfg.seed,
                                   level=cfg.level, log=_log, return_tables=True)
    _log(f"estimation done in {time.perf_counter() - t0:.1f}s")
    folds = [int(v) for v in np.bincount(tables[0].folds)[1:]]
    meta = {"seed": cfg.seed, "m": ds.m, "n_units": ds.n_units, "fold_sizes": folds,
            "theta_ref": reference_theta(cfg), "learners": {
                "propensity": learners.propensity, "survival": learners.survival}}
    rows = []
    for res in results:
        s = res.spec
        th, th_ref = rp.theta_of(s)
        rows.append({"estimand": s.kind, "policy": cfg.policy, "theta": th, "theta_ref": th_ref,
                     "transform": cfg.transform, "tau": s.transform.tau if cfg.transform == "risk"
                     else s.transform.h, "point": res.point, "se": res.se,
                     "ci_lo": res.ci[0], "ci_hi": res.ci[1], "m": res.m, "K": res.K,
                     "S": res.S, "r": res.r})
    return specs, results, tables, rows, meta


def run_fit(cfg: RunConfig) -> int:
    _, _, _, rows, meta = _fit_common(cfg)
    write_results(cfg, FIT_COLUMNS, rows, meta)
    return 0


def run_ucb(cfg: RunConfig) -> int:
    """Uniform bands over the theta grid for each (estimand, tau), or over
    the joint (tau, theta) grid for each estimand.  Grid points with zero
    variance (a contrast at its own reference) are left out of the band."""
    specs, results, tables, rows, meta = _fit_common(cfg)
    point = np.array([r.point for r in results])
    sigma = np.sqrt(np.maximum([r.variance for r in results], 0.0))
    groups: dict = {}
    for i, s in enumerate(specs):
        key = s.kind if cfg.band == "tau_theta" else (s.kind, s.transform)
        groups.setdefault(key, []).append(i)
    meta["bands"] = []
    for key, cols in groups.items():
        cols = [c for c in cols if sigma[c] > 0]
        if not cols:
            continue
        band = ucb_critical_value(tables[0], cols, point[cols], sigma[cols], cfg.B, cfg.level,
                                  seed=cfg.seed)
        test = interference_test(band) if len(cols) > 1 else ""
        name = key if isinstance(key, str) else f"{key[0]}@{key[1].label}"
        meta["bands"].append({"band": name, "critical": band.critical, "points": len(cols),
                              "interference_test": test})
        for j, c in enumerate(cols):
            rows[c].update(ucb_lo=band.lo[j], ucb_hi=band.hi[j], critical=band.critical,
                           band=name, interference_test=test)
    meta["B"] = cfg.B
    write_results(cfg, UCB_COLUMNS, rows, meta)
    return 0


def run_reproduce(cfg: RunConfig) -> int:
    design = rp.TARGETS[cfg.target]
    design = rp.TableDesign(design.family, design.thetas, design.theta_ref, tuple(cfg.tau))
    dgp = dgp_from_dict(cfg.dgp)
    learners = learner_config(cfg.learner, dgp)
    m = cfg.m if cfg.m is not None else dgp.m
    specs = rp.table_specs(design, tuple(cfg.estimands))
    _log(f"{cfg.target}: {len(specs)} cells, D={cfg.D}, m={m}, K={cfg.K}, r={cfg.r}, S={cfg.S}")
    t0 = time.perf_counter()
    truth = rp.table_truths(dgp, specs, cfg.truth_mc, cfg.seed)
    alt = rp.table_truths(dgp, specs, cfg.truth_mc, cfg.seed, "random_effect") \
        if design.family == "tpb" else np.full(len(specs), np.nan)
    _log(f"truths from {cfg.truth_mc} Monte Carlo clusters in {time.perf_counter() - t0:.1f}s")
    reps = rp.run_replications(dgp, specs, cfg.D, cfg.jobs, _log, m=m, K=cfg.K, S=cfg.S, r=cfg.r,
                               learners=learners, seed=cfg.seed, B=cfg.B, level=cfg.level)
    failed = [i for i, x in enumerate(reps) if isinstance(x, str)]
    reps = [x for x in reps if not isinstance(x, str)]
    if not reps:
        raise InterfSurvError("every replication failed")
    summary = rp.summarize(specs, reps, truth, cfg.level)
    rows = []
    for c, row in enumerate(summary):
        s = row.pop("spec")
        th, th_ref = rp.theta_of(s)
        ref = rp.PUBLISHED.get((cfg.target, th, s.kind, s.transform.tau), (None,) * 6)
        rows.append({"target": cfg.target, "estimand": s.kind, "theta": th, "theta_ref": th_ref,
                     "tau": s.transform.tau, "truth_alt": 100 * alt[c], "D": len(reps), "m": m,
                     **row, **dict(zip(("ref_truth", "ref_bias", "ref_ase", "ref_ese",
                                        "ref_cov", "ref_ucov"), ref))})
    meta = {"seed": cfg.seed, "D": cfg.D, "failed_replications": failed, "m": m,
            "truth_mc": cfg.truth_mc,
            "scale": "x100", "truth_alt": "TPB laws conditioned within each random-intercept "
            "value" if design.family == "tpb" else "not applicable",
            "reference_columns": "published values; contrast rows listed under the estimand "
            "they equal numerically"}
    write_results(cfg, REPRODUCE_COLUMNS, rows, meta)
    _log(f"done in {time.perf_counter() - t0:.1f}s")
    return 0


COMMANDS = {"simulate": run_simulate, "fit": run_fit, "ucb": run_ucb,
            "reproduce": run_reproduce}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="interfsurv", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path, '-' for standard output")
    common.add_argument("--format", choices=("csv", "json", "jsonl"))
    est = argparse.ArgumentParser(add_help=False)
    est.add_argument("--policy", choices=("typeb", "cips", "tpb"))
    est.add_argument("--theta", help="policy grid, e.g. '0.3,0.45,0.6'")
    est.add_argument("--theta-ref", dest="theta_ref", type=float,
                     help="reference policy parameter of contrasts")
    est.add_argument("--tau", help="horizons, e.g. '0.2,0.4'")
    est.add_argument("--transform", choices=("risk", "rmst"))
    est.add_argument("--estimands", help="comma list from mu,mu1,mu0,de,se1,se0,oe")
    est.add_argument("--K", type=int)
    est.add_argument("--S", type=int)
    est.add_argument("--r", type=int)
    est.add_argument("--B", type=int)
    est.add_argument("--level", type=float)
    est.add_argument("--learner", choices=tuple(LEARNERS))
    est.add_argument("--jobs", type=int)

    s = sub.add_parser("simulate", parents=[common], help="simulate a dataset")
    s.add_argument("--m", type=int)
    s.add_argument("--truth-out", dest="truth_out", help="CSV of hidden T, C and b")
    for name, helptext in (("fit", "point estimates and pointwise intervals"),
                           ("ucb", "estimates with uniform confidence bands")):
        f = sub.add_parser(name, parents=[common, est], help=helptext)
        f.add_argument("--data", help="dataset CSV or JSONL")
        if name == "ucb":
            f.add_argument("--band", choices=("theta", "tau_theta"))
    r = sub.add_parser("reproduce", parents=[common, est], help="replicate a simulation table")
    r.add_argument("--target", choices=tuple(rp.TARGETS))
    r.add_argument("--D", type=int, help="number of replications")
    r.add_argument("--m", type=int, help="clusters per replication")
    r.add_argument("--truth-mc", dest="truth_mc", type=int, help="Monte Carlo clusters for truths")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except FileNotFoundError as e:
        print(f"interfsurv: error: file not found: {e.filename or e.args[0]}", file=sys.stderr)
        return 2
    except UsageError as e:
        print(f"interfsurv: error: {e}", file=sys.stderr)
        return 2
    except InterfSurvError as e:
        print(f"interfsurv: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001
        print(f"interfsurv: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
