"""Command-line front end.

Commands: ``analyze``, ``synthesize``, ``simulate``, ``certify-sector`` and
``benchmark``.  Each command reads an optional JSON config (``--config``),
applies command-line overrides, and writes JSON/CSV artifacts to ``--out``.

Exit codes: 0 success, 2 infeasible or not certified, 1 usage or runtime
error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis as an
from . import synthesis as sy
from .errors import CertificationFailed, Infeasible, ParseError, RnnStabError
from .model import (RnnModel, _read_json, augment_integrator, build_closed_loop, design_matrices,
                    is_schur, load_esn, load_model, save_esn, save_model)
from .sigmoid import (certify_sector_global, certify_sector_narrow, certify_sector_psi,
                      compute_theta, compute_ybar, kind_from_name)
from .verify import (generate_surrogate_data, identify_esn, load_preset, monte_carlo_invariance,
                     simulate)

log = logging.getLogger("rnnstab")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

METHODS = {"global": an.GLOBAL, "aux": an.REGIONAL_AUX, "narrow": an.REGIONAL_NARROW}
F_LMI = {"lambdamin": an.LAMBDA_MIN, "logdet": an.LOG_DET}


@dataclass
class RunConfig:
    """Settings of one CLI run; field names double as config-file keys."""

    command: str = ""
    model: Optional[str] = None
    esn: Optional[str] = None
    gain: Optional[str] = None
    kind: Optional[str] = None
    method: str = "narrow"
    f_lmi: str = "LambdaMin"
    delta_bar: list = field(default_factory=lambda: [5.0, 10.0, 20.0])
    mode: str = "fixed"
    weights: dict = field(default_factory=lambda: {"q_y": 0.1, "q_i": 0.1, "r_u": 0.05, "w": 1.0})
    q_tilde: Optional[list] = None
    r_tilde: Optional[list] = None
    delta_h: Optional[float] = None
    i_max: int = 20
    theta: Optional[float] = None
    h: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    grid_step: float = 1e-3
    steps: int = 200
    x0: Optional[list] = None
    reference: Optional[float] = None
    n_s: int = 3
    preset: str = "surrogate_ph_v1"
    samples: Optional[int] = None
    seed: int = 0
    n_samples: int = 10_000
    workers: int = 1
    out: str = "rnnstab_out"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ParseError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ParseError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)

    def method_name(self):
        try:
            return METHODS[self.method.lower()]
        except KeyError:
            raise ParseError(f"unknown method {self.method!r}; use global, aux or narrow") from None

    def f_lmi_name(self):
        try:
            return F_LMI[self.f_lmi.lower()]
        except KeyError:
            raise ParseError(f"unknown f_lmi {self.f_lmi!r}; use LambdaMin or LogDet") from None


# -- argument parsing ----------------------------------------------------------

_FLAG_FIELDS = {
    "model": "model", "esn": "esn", "gain": "gain", "kind": "kind", "method": "method",
    "f_lmi": "f_lmi", "delta_bar": "delta_bar", "mode": "mode", "dh": "delta_h",
    "imax": "i_max", "theta": "theta", "h": "h", "grid_step": "grid_step", "steps": "steps",
    "reference": "reference", "ns": "n_s", "samples": "samples", "seed": "seed",
    "n_samples": "n_samples", "workers": "workers", "out": "out",
}


def build_parser():
    p = argparse.ArgumentParser(prog="rnnstab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("analyze", "synthesize", "simulate", "certify-sector", "benchmark"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file; flags override its values")
        s.add_argument("--model", help="model JSON (a0, bu, bsigma, c0, du)")
        s.add_argument("--esn", help="ESN JSON; the integrator is appended")
        s.add_argument("--gain", help="gain JSON with key 'k' (or a synthesis result)")
        s.add_argument("--kind", help="sigmoid kind override: tanh, sat or algebraic")
        s.add_argument("--method", choices=sorted(METHODS))
        s.add_argument("--f-lmi", dest="f_lmi", choices=["LambdaMin", "LogDet"])
        s.add_argument("--delta-bar", dest="delta_bar", type=float, action="append")
        s.add_argument("--mode", choices=["fixed", "scalarized"])
        s.add_argument("--dh", type=float)
        s.add_argument("--imax", type=int)
        s.add_argument("--theta", type=float)
        s.add_argument("--h", type=float, action="append")
        s.add_argument("--grid-step", dest="grid_step", type=float)
        s.add_argument("--steps", type=int)
        s.add_argument("--reference", type=float)
        s.add_argument("--ns", type=int)
        s.add_argument("--samples", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--n-samples", dest="n_samples", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--out")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def make_config(args) -> RunConfig:
    base = {}
    if args.config:
        base = _read_json(args.config)
        if not isinstance(base, dict):
            raise ParseError(f"{args.config}: config must be a JSON object")
    cfg = RunConfig.from_dict(base)
    cfg.command = args.command
    for flag, fname in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, fname, v)
    return cfg


# -- helpers ----------------------------------------------------------------------

def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else v for v in r])


def _load_plant(cfg) -> tuple[RnnModel, Optional[object]]:
    if cfg.model and cfg.esn:
        raise ParseError("give either --model or --esn, not both")
    if cfg.model:
        model, esn = load_model(cfg.model), None
    elif cfg.esn:
        esn = load_esn(cfg.esn)
        model = augment_integrator(esn)
    else:
        raise ParseError("a model is required (--model or --esn)")
    if cfg.kind:
        model = dataclasses.replace(model, kind=kind_from_name(cfg.kind))
    return model, esn


def _load_gain(cfg, model):
    if cfg.gain is None:
        return np.zeros((model.m, model.n))
    d = _read_json(cfg.gain)
    if isinstance(d, dict):
        k = d.get("k", d.get("gain"))
        if k is None:
            raise ParseError(f"{cfg.gain}: missing field 'k'")
    else:
        k = d
    return np.array(k, dtype=float).reshape(model.m, model.n)


def _weights(cfg, model, esn) -> sy.H2Weights:
    w = cfg.weights
    if cfg.q_tilde is not None or cfg.r_tilde is not None:
        if cfg.q_tilde is None or cfg.r_tilde is None:
            raise ParseError("q_tilde and r_tilde must be given together")
        return sy.H2Weights(np.array(cfg.q_tilde, dtype=float), np.array(cfg.r_tilde, dtype=float))
    if esn is not None:
        return sy.benchmark_weights(esn.wy, w.get("q_y", 0.1), w.get("q_i", 0.1), w.get("r_u", 0.05))
    # generic model: penalize the whole state and the input
    n, m = model.n, model.m
    q = np.vstack([np.eye(n), np.zeros((m, n))])
    r = np.vstack([np.zeros((n, m)), np.eye(m)])
    return sy.H2Weights(q, r)


def _validate(cert, cl, cfg):
    rep = an.validate_certificate(cert, cl, n_samples=cfg.n_samples, seed=cfg.seed)
    mc = monte_carlo_invariance(cert, cl, n_samples=cfg.n_samples, seed=cfg.seed + 1)
    return {"validation": rep.to_dict(), "monte_carlo": mc.to_dict(),
            "passed": bool(rep.passed and mc.passed)}


def _diagnose(exc: Infeasible):
    msg = str(exc)
    print(f"infeasible: {msg}", file=sys.stderr)
    return {"status": "Infeasible", "lemma": exc.lemma, "message": msg}


# -- commands ---------------------------------------------------------------------

def cmd_analyze(cfg: RunConfig) -> int:
    model, _ = _load_plant(cfg)
    k = _load_gain(cfg, model)
    cl = build_closed_loop(model, k)
    method, f_lmi = cfg.method_name(), cfg.f_lmi_name()
    out = _out_dir(cfg)
    table = None
    try:
        if method == an.GLOBAL:
            cert = an.check_global(cl)
        elif method == an.REGIONAL_AUX:
            cert = an.analyze_regional_aux(cl, cfg.theta, f_lmi)
        else:
            res = an.algorithm1(cl, cfg.delta_h, cfg.i_max, f_lmi, workers=cfg.workers)
            cert, table = res.certificate, res
    except Infeasible as exc:
        _write_json(out / "analysis.json", _diagnose(exc))
        return EXIT_INFEASIBLE
    report = _validate(cert, cl, cfg)
    _write_json(out / "certificate.json", cert.to_dict())
    _write_json(out / "validation.json", report)
    summary = {"status": "Feasible", "method": method, "gamma": cert.gamma,
               "validated": report["passed"]}
    if table is not None:
        summary.update(hbar=table.hbar, delta_h=table.delta_h, best_index=table.best_index)
        _write_csv(out / "sweep.csv", ["i", "h", "gamma", "status"],
                   [[r.i, r.h, r.gamma, r.status] for r in table.table])
    _write_json(out / "analysis.json", summary)
    print(f"{method}: gamma = {cert.gamma:.6g}, validation {'passed' if report['passed'] else 'FAILED'}")
    return EXIT_OK if report["passed"] else EXIT_ERROR


def _synthesize_rows(cfg, model, esn, method, out, tag=""):
    """Run the delta-bar ladder for one method; returns (rows, results, all_valid)."""
    w8 = _weights(cfg, model, esn)
    f_lmi = cfg.f_lmi_name()
    dm = design_matrices(model)
    kwargs = {"f_lmi": f_lmi} if method != an.GLOBAL else {}
    if method == an.REGIONAL_NARROW:
        kwargs.update(delta_h=cfg.delta_h, i_max=cfg.i_max)
    if cfg.mode == "scalarized":
        mode = sy.Scalarized(cfg.weights.get("w", 1.0))
        if method == an.REGIONAL_AUX:
            runs = [(None, *_try(lambda: sy.synthesize_aux(model, w8, mode, theta=cfg.theta, **kwargs)))]
        elif method == an.REGIONAL_NARROW:
            runs = [(None, *_try(lambda: sy.synthesize_narrow(model, w8, mode, **kwargs)))]
        else:
            raise ParseError("scalarized mode needs method aux or narrow")
    else:
        if method == an.REGIONAL_AUX and cfg.theta is not None:
            kwargs["theta"] = cfg.theta
        runs = sy.synthesize_ladder(model, w8, [float(d) for d in cfg.delta_bar], method,
                                    workers=cfg.workers, **kwargs)
    rows, results, all_valid = [], [], True
    for db, r, status in runs:
        if r is None:
            rows.append([db, status.split(":")[0], None, None, None, None])
            print(f"{method} delta_bar={db}: {status}", file=sys.stderr)
            continue
        cl = build_closed_loop(model, r.k)
        rep = _validate(r.certificate, cl, cfg)
        all_valid &= rep["passed"]
        h2 = r.h2_oracle(model, w8)
        rho = is_schur(dm.f + dm.g @ r.k)[1]
        label = db if db is not None else r.delta
        rows.append([label, "Feasible", r.gamma, h2, rho, r.delta])
        d = r.to_dict()
        d["h2_oracle"] = h2
        d["validation"] = rep
        _write_json(out / f"synthesis{tag}_{method}_{label:g}.json", d)
        _write_json(out / f"gain{tag}_{method}_{label:g}.json", {"k": r.k.tolist()})
        results.append((label, r))
    _write_csv(out / f"tradeoff{tag}_{method}.csv",
               ["delta_bar", "status", "gamma", "h2_oracle", "radius", "delta"], rows)
    return rows, results, all_valid


def _try(fn):
    try:
        return fn(), "Feasible"
    except Infeasible as exc:
        return None, f"Infeasible: {exc}"


def cmd_synthesize(cfg: RunConfig) -> int:
    model, esn = _load_plant(cfg)
    method = cfg.method_name()
    out = _out_dir(cfg)
    try:
        rows, results, valid = _synthesize_rows(cfg, model, esn, method, out)
    except Infeasible as exc:
        _write_json(out / "synthesis.json", _diagnose(exc))
        return EXIT_INFEASIBLE
    for r in rows:
        print(",".join("" if v is None else f"{v}" for v in r))
    if not results:
        return EXIT_INFEASIBLE
    return EXIT_OK if valid else EXIT_ERROR


def _step_summary(traj, reference):
    y = traj.outputs
    if reference is None or traj.diverged:
        return {"diverged": traj.diverged, "steps": traj.steps}
    # the integrator is the last state; its increment is the tracking error
    err = np.diff(traj.states[:, -1])
    return {"diverged": False, "steps": traj.steps, "final_error": float(abs(err[-1])) if err.size else 0.0,
            "max_abs_error": float(np.max(np.abs(err))) if err.size else 0.0,
            "final_state_norm": float(np.linalg.norm(traj.states[-1])),
            "final_output": y[-1].tolist()}


def cmd_simulate(cfg: RunConfig) -> int:
    model, _ = _load_plant(cfg)
    if cfg.gain is None:
        raise ParseError("simulate needs a gain file (--gain)")
    k = _load_gain(cfg, model)
    cl = build_closed_loop(model, k)
    x0 = np.zeros(model.n) if cfg.x0 is None else np.array(cfg.x0, dtype=float)
    traj = simulate(cl, x0, cfg.steps, reference=cfg.reference)
    out = _out_dir(cfg)
    traj.to_csv(out / "trajectory.csv")
    summary = _step_summary(traj, cfg.reference)
    _write_json(out / "simulation.json", summary)
    print(json.dumps(summary))
    return EXIT_ERROR if traj.diverged else EXIT_OK


def cmd_certify_sector(cfg: RunConfig) -> int:
    kind = kind_from_name(cfg.kind or "tanh")
    theta = cfg.theta if cfg.theta is not None else compute_theta(kind)
    reports = [certify_sector_global(kind, cfg.grid_step, raise_on_fail=False),
               certify_sector_psi(kind, theta, cfg.grid_step, raise_on_fail=False)]
    for h in cfg.h:
        reports.append(certify_sector_narrow(kind, h, compute_ybar(kind, h), cfg.grid_step,
                                             raise_on_fail=False))
    out = _out_dir(cfg)
    ok = all(r.certified for r in reports)
    _write_json(out / "sector_report.json",
                {"kind": kind.name, "theta": theta, "certified": ok,
                 "reports": [r.to_dict() for r in reports]})
    for r in reports:
        line = f"{r.inequality}: {'certified' if r.certified else 'FAILED'}"
        if not r.certified:
            line += f" (witness y = {r.worst_y:.9g}, value {r.worst_value:.3e})"
        print(line)
    return EXIT_OK if ok else EXIT_INFEASIBLE


def cmd_benchmark(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    preset = load_preset(cfg.preset)
    data = generate_surrogate_data(preset, T=cfg.samples, seed=cfg.seed)
    data.to_csv(out / "data.csv")
    tr = identify_esn(data, n_s=cfg.n_s, seed=cfg.seed)
    save_esn(tr.esn, out / "esn.json")
    model = augment_integrator(tr.esn)
    save_model(model, out / "model.json")
    ref = (preset.get("reference", 7.0) - tr.y_center) / tr.y_scale
    summary = {"n_s": cfg.n_s, "seed": cfg.seed, "fit_percent": tr.fit,
               "normalization": {"u_center": tr.u_center, "u_scale": tr.u_scale,
                                 "y_center": tr.y_center, "y_scale": tr.y_scale},
               "reference_normalized": ref, "methods": {}}
    try:
        an.check_global(build_closed_loop(model, np.zeros((1, model.n))))
        summary["global_analysis"] = "Feasible"
    except Infeasible as exc:
        summary["global_analysis"] = f"Infeasible ({exc.lemma or 'program'})"
    gates = True
    for key in ("aux", "narrow"):
        method = METHODS[key]
        try:
            rows, results, valid = _synthesize_rows(cfg, model, tr.esn, method, out)
        except Infeasible as exc:
            rows, results, valid = [], [], True
            summary["methods"][key] = {"status": f"Infeasible: {exc}"}
            continue
        sims = {}
        for label, r in results:
            traj = simulate(build_closed_loop(model, r.k), np.zeros(model.n), cfg.steps, reference=ref)
            traj.to_csv(out / f"trajectory_{method}_{label:g}.csv")
            sims[f"{label:g}"] = _step_summary(traj, ref)
        gammas = [r[2] for r in rows if r[2] is not None]
        summary["methods"][key] = {
            "rows": rows, "validated": valid, "simulations": sims,
            "gamma_nondecreasing": bool(all(b >= a - 1e-6 * max(1.0, abs(a))
                                            for a, b in zip(gammas, gammas[1:]))),
        }
        if key == "narrow":
            gates &= bool(results) and valid
        else:
            gates &= valid
    _write_json(out / "benchmark.json", summary)
    print(json.dumps({k: summary[k] for k in ("n_s", "fit_percent", "global_analysis")}))
    for key, v in summary["methods"].items():
        print(key, v.get("status", "rows=%d validated=%s" % (len(v["rows"]), v["validated"])))
    return EXIT_OK if gates else EXIT_ERROR


COMMANDS = {"analyze": cmd_analyze, "synthesize": cmd_synthesize, "simulate": cmd_simulate,
            "certify-sector": cmd_certify_sector, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        return COMMANDS[cfg.command](cfg)
    except (ParseError, CertificationFailed) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Infeasible as exc:
        _diagnose(exc)
        return EXIT_INFEASIBLE
    except (RnnStabError, ValueError, OSError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
