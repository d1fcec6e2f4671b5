"""Command-line runner for the verification pipelines.

Each subcommand resolves its parameters, runs a pipeline, writes CSV/JSON
files plus a ``manifest.json`` into ``<out>/<cmd>-<digest>`` and exits with

* 0 if every assertion passed,
* 2 if an assertion failed,
* 3 if a numerical budget was exhausted,
* 64 on a usage error,
* 74 on an I/O error.

The output root is ``--out``, else ``$DELTALAB_OUT``, else ``deltalab-runs``.
A ``--config`` file of ``key = value`` lines overrides the flags.
"""
from __future__ import annotations

import argparse
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import hashlib
import io
import json
import math
import os
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from .decay import (combes_thomas_fit, convolution_decay, decaying_kernel,
                    free_green_cell_bounds, gamma_mu_star, inverse_decay_check,
                    max_conjugation_diagnostic, mu_star, synthetic_decay_matrix,
                    verify_offdiag_decay)
from .disorder import DisorderSpec, empty_config, sample
from .eigenmodes import (CutoffSpec, GeneralizedMode, ModeProfile, admissible_radius,
                         commutator_C, commutator_norms, laplacian_fd, overlap_ball,
                         overlap_lower_bound, psi0, psi_E, psi_L, weighted_mode_norm)
from .green import EnergyPoint, assemble_gamma, c_num, c_parseval
from .lattice import LatticeWindow
from .numerics import QuadratureError, operator_norm
from .transport import (ProxySystem, deloc_chain, moment_resolvent, moment_time_avg,
                        projector_tail_bounds, random_proxy)

__all__ = ["main", "run", "COMMANDS", "Assertion", "RunResult"]

EXIT_OK, EXIT_ASSERT, EXIT_BUDGET, EXIT_USAGE, EXIT_IO = 0, 2, 3, 64, 74
PI2 = math.pi ** 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class Assertion:
    name: str
    passed: bool
    value: float
    bound: float

    def to_dict(self):
        return {"name": self.name, "pass": bool(self.passed),
                "value": _num(self.value), "bound": _num(self.bound)}


@dataclass
class RunResult:
    files: dict = field(default_factory=dict)   # name -> text
    assertions: list = field(default_factory=list)
    budget_exceeded: bool = False

    def check(self, name, passed, value, bound):
        self.assertions.append(Assertion(name, bool(passed), float(value), float(bound)))

    def json(self, name, obj):
        self.files[name] = json.dumps(obj, indent=2, sort_keys=True, default=_num) + "\n"

    def csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        self.files[name] = buf.getvalue()


def _num(x):
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _floats(text):
    return [float(eval_number(t)) for t in str(text).split(",") if t.strip()]


def eval_number(text):
    """Parse a number, allowing the suffix ``pi2`` for multiples of π² (``1.5pi2``)."""
    t = str(text).strip().lower()
    if t.endswith("pi2"):
        head = t[:-3].rstrip("*")
        return (float(head) if head else 1.0) * PI2
    return float(t)


def _energy(args):
    if args.eps is not None:
        return PI2 + args.eps
    return args.E


def _disorder(args):
    return DisorderSpec(a=args.a, b=args.b, shape=args.shape, p0=args.p0)


# --------------------------------------------------------------------------
# pipelines; each returns a RunResult

def _gamma_one(task):
    E, kappa, L, seed, spec, constant = task
    cfg = sample(spec, LatticeWindow(L), seed)
    system = assemble_gamma(cfg, EnergyPoint(E, kappa))
    cert = system.certificate()
    lam = system.lambda_min
    c = c_num(E, kappa) if constant == "num" else c_parseval(E, kappa)
    inv = system.inverse_norm if system.size else 0.0
    return {"seed": seed, "E": E, "kappa": kappa, "L": L, "active": int(system.size),
            "lambda_min": lam, "constant": c, "bound": c * kappa,
            "c_num": cert.c_num, "c_parseval": cert.c_parseval,
            "inverse_norm": inv, "inverse_bound": 1.0 / lam if system.size else math.inf}


def pipeline_gamma_check(args, mapper):
    E = _energy(args)
    tasks = [(E, args.kappa, args.L, args.seed + i, _disorder(args), args.constant)
             for i in range(args.count)]
    rows = list(mapper(_gamma_one, tasks))
    res = RunResult()
    for r in rows:
        res.check(f"dissipativity[seed={r['seed']}]", r["lambda_min"] >= r["bound"],
                  r["lambda_min"], r["bound"])
        res.check(f"inverse_bound[seed={r['seed']}]",
                  r["inverse_norm"] <= r["inverse_bound"] * (1 + 1e-10),
                  r["inverse_norm"], r["inverse_bound"])
    res.json("gamma_check.json", {"constant": args.constant, "certificates": rows,
                                  "pass": all(a.passed for a in res.assertions)})
    return res


def _inverse_one(task):
    kind, seed, params = task
    if kind == "gamma":
        E, kappa, L, spec, margin = params
        window = LatticeWindow(L)
        cfg = sample(spec, window, seed)
        system = assemble_gamma(cfg, EnergyPoint(E, kappa))
        A = system.matrix
        keep = cfg.active
        dist = window.distances()[np.ix_(keep, keep)]
        interior = window.interior(margin)[keep]
        rho = system.inverse_norm
        mu = gamma_mu_star(system)
    else:
        d, L, gamma, C0 = params
        window = LatticeWindow(L, d)
        A = synthetic_decay_matrix(window, gamma, C0, seed)
        dist = window.distances()
        interior = window.interior(1)
        if not verify_offdiag_decay(A, dist, C0, gamma):
            raise AssertionError("synthetic matrix violates its decay bound")
        rho = operator_norm(np.linalg.inv(A))
        mu = mu_star(rho, gamma, C0, d)
    rep = inverse_decay_check(A, rho, mu, dist, interior)
    diag = max_conjugation_diagnostic(A, mu, rho, dist)
    return {"kind": kind, "seed": seed, "size": int(A.shape[0]), "rho": rho, "mu": mu,
            "worst_ratio": rep.worst_ratio, "worst_ratio_interior": rep.worst_ratio_interior,
            "diagnostic": diag}


def pipeline_inverse_decay(args, mapper):
    tasks = []
    if args.synthetic_d:
        tasks += [("synthetic", args.seed + i, (args.synthetic_d, args.L, args.gamma, args.C0))
                  for i in range(args.count)]
    else:
        tasks += [("gamma", args.seed + i,
                   (_energy(args), args.kappa, args.L, _disorder(args), args.margin))
                  for i in range(args.count)]
    rows = list(mapper(_inverse_one, tasks))
    res = RunResult()
    for r in rows:
        tag = f"{r['kind']}[seed={r['seed']}]"
        res.check(f"inverse_decay_interior {tag}", r["worst_ratio_interior"] <= 1 + 1e-12,
                  r["worst_ratio_interior"], 1.0)
        res.check(f"conjugation_diagnostic {tag}", r["diagnostic"] <= 0.5, r["diagnostic"], 0.5)
    keys = ["kind", "seed", "size", "rho", "mu", "worst_ratio", "worst_ratio_interior", "diagnostic"]
    res.csv("inverse_decay.csv", keys, [[r[k] for k in keys] for r in rows])
    return res


def _ct_one(task):
    E, kappa, L, seed, spec, free, order, rmin, rmax = task
    window = LatticeWindow(L)
    cfg = empty_config(window) if free else sample(spec, window, seed)
    fit = combes_thomas_fit(assemble_gamma(cfg, EnergyPoint(E, kappa)), rmin=rmin,
                            rmax=rmax, order=order)
    return E, fit


def pipeline_ct_fit(args, mapper):
    tasks = [(E, args.kappa, args.L, args.seed, _disorder(args), args.free, args.order,
              args.rmin, args.rmax) for E in _floats(args.energies)]
    res = RunResult()
    rows, summary = [], []
    for E, fit in mapper(_ct_one, tasks):
        for s, v in zip(fit.shells, fit.profile):
            rows.append([E, int(s), v])
        summary.append({"E": E, "rate": fit.fit.rate, "r_squared": fit.fit.r_squared,
                        "tau": fit.tau, "mu_star": fit.mu_star,
                        "reference_rate": fit.reference_rate, "quadrature_change": fit.error,
                        "envelope_rate": fit.envelope_fit.rate,
                        "envelope_r_squared": fit.envelope_fit.r_squared,
                        "ray_rate": fit.ray_fit.rate, "ray_r_squared": fit.ray_fit.r_squared})
        res.check(f"ct_rate[E={E:.6g}]", fit.fit.rate >= 0.8 * fit.reference_rate and fit.fit.rate > 0,
                  fit.fit.rate, 0.8 * fit.reference_rate)
        res.check(f"ct_r_squared[E={E:.6g}]", fit.fit.r_squared >= 0.98, fit.fit.r_squared, 0.98)
    res.csv("ct_fit.csv", ["E", "shell", "mean_cell_average"], rows)
    res.json("ct_fit.json", {"fits": summary})
    return res


def _fd_residual(mode, h, points):
    f = lambda x: psi_L(x, mode)   # noqa: E731
    E = mode.E
    r = -laplacian_fd(f, points, h) - E * f(points) - commutator_C(points, mode)
    return float(np.max(np.abs(r)))


def _eigenmode_one(task):
    kind, value, extra = task
    if kind == "lattice":
        mode = GeneralizedMode(ModeProfile(value))
        ax = np.arange(-4, 5)
        Z = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3).astype(float)
        return kind, value, float(np.max(np.abs(psi_E(Z, mode)))), None
    if kind == "normalization":
        mode = GeneralizedMode(ModeProfile(value, extra))
        return kind, value, abs(psi0(0.0, 0.0, mode.profile) - 1.0), extra
    if kind == "fd":
        mode = GeneralizedMode(ModeProfile(value, "split"), CutoffSpec(4.0))
        rng = np.random.default_rng(extra)
        pts = np.column_stack([rng.uniform(4.2, 7.8, 16), rng.uniform(-3, 3, 16),
                               rng.uniform(-2, 2, 16)])
        res = [_fd_residual(mode, h, pts) for h in (0.1, 0.05, 0.025)]
        return kind, value, res, None
    if kind == "commutator":
        mode = GeneralizedMode(ModeProfile(value, "split"), CutoffSpec(extra))
        return kind, value, commutator_norms(mode).A0, extra
    if kind == "weighted":
        w = weighted_mode_norm(extra, GeneralizedMode(ModeProfile(value)))
        return kind, value, (w.upper, w.bound), extra
    if kind == "overlap":
        t = admissible_radius(eps=value)
        ov = overlap_ball(t, GeneralizedMode(ModeProfile(value)))
        return kind, value, (ov.real, overlap_lower_bound(t)), t
    raise ValueError(kind)


def pipeline_eigenmode_bounds(args, mapper):
    eps_list = _floats(args.eps_list)
    tasks = [("lattice", e, None) for e in eps_list]
    tasks += [("normalization", e, s) for e in eps_list for s in ("uniform", "bump", "split")]
    tasks += [("fd", eps_list[-1], args.seed)]
    tasks += [("commutator", eps_list[-1], L) for L in _floats(args.L_list)]
    tasks += [("weighted", eps_list[-1], q) for q in _floats(args.q_list)]
    tasks += [("overlap", e, None) for e in eps_list]
    out = list(mapper(_eigenmode_one, tasks))
    res = RunResult()
    record = {"lattice": [], "normalization": [], "fd": None, "commutator": [],
              "weighted": [], "overlap": []}
    A0 = []
    for kind, value, data, extra in out:
        if kind == "lattice":
            res.check(f"psi_E_on_lattice[eps={value:.6g}]", data <= 1e-14, data, 1e-14)
            record["lattice"].append({"eps": value, "max_abs": data})
        elif kind == "normalization":
            res.check(f"psi0_origin[eps={value:.6g},{extra}]", data <= 1e-10, data, 1e-10)
            record["normalization"].append({"eps": value, "shape": extra, "error": data})
        elif kind == "fd":
            orders = [math.log2(a / b) for a, b in zip(data[:-1], data[1:])]
            res.check("fd_order", min(orders) >= 1.9, min(orders), 1.9)
            record["fd"] = {"eps": value, "h": [0.1, 0.05, 0.025], "residual": data,
                            "orders": orders}
        elif kind == "commutator":
            A0.append(data)
            record["commutator"].append({"eps": value, "L": extra, "A0": data})
        elif kind == "weighted":
            upper, bound = data
            res.check(f"weighted_norm[q={extra:g}]", upper <= bound, upper, bound)
            record["weighted"].append({"eps": value, "q": extra, "upper": upper, "bound": bound})
        elif kind == "overlap":
            re, lb = data
            res.check(f"overlap_lower_bound[eps={value:.6g}]", re >= lb, re, lb)
            record["overlap"].append({"eps": value, "t": extra, "re_overlap": re, "lower": lb})
    drift = (max(A0) - min(A0)) / min(A0)
    res.check("commutator_drift", drift <= 0.10, drift, 0.10)
    res.json("eigenmode_bounds.json", record)
    return res


def _random_size(seed, trial, nmax):
    return 2 + (trial * 7 + seed) % (nmax - 1)


def _identity_one(task):
    seed, trial, n, T_list = task
    proxy = random_proxy(n, seed * 100003 + trial)
    rows = []
    for T in T_list:
        a = moment_time_avg(proxy, T)
        b = moment_resolvent(proxy, T)
        rows.append([trial, n, T, a, b, abs(a - b) / a])
    return rows


def pipeline_transport_identity(args, mapper):
    T_list = _floats(args.T)
    sizes = [args.n if not args.vary else _random_size(args.seed, i, args.n)
             for i in range(args.trials)]
    tasks = [(args.seed, i, sizes[i], T_list) for i in range(args.trials)]
    rows = [r for chunk in mapper(_identity_one, tasks) for r in chunk]
    worst = max(r[-1] for r in rows)
    res = RunResult()
    res.check("transport_identity_max_rel_err", worst <= 1e-6, worst, 1e-6)
    res.csv("transport_identity.csv", ["trial", "n", "T", "time_avg", "resolvent", "rel_err"], rows)
    res.json("transport_identity.json", {"max_rel_err": worst, "trials": args.trials, "T": T_list})
    return res


def _projector_one(task):
    seed, trial, n = task
    rng = np.random.default_rng([seed, trial])
    proxy = random_proxy(n, [seed, trial, 1], scale=float(rng.uniform(0.5, 3.0)))
    lam = proxy.eigenvalues
    E = float(rng.uniform(lam.min(), lam.max()))
    delta = float(rng.uniform(0.05, 1.0))
    eps = float(rng.uniform(0.01, 1.0))
    r = projector_tail_bounds(proxy, E, delta, eps)
    return [trial, n, E, delta, eps, r.a, r.proj_norm, r.proj_bound, r.resolvent_norm,
            r.resolvent_bound, r.passed]


def two_level_probe(E, delta, delta_prime):
    """Ratio bound/actual of the first projector bound for levels ``E ± delta_prime``."""
    H = np.diag([E - delta_prime, E + delta_prime])
    proxy = ProxySystem(H, np.ones(2), np.array([1.0, 1.0]) / math.sqrt(2))
    r = projector_tail_bounds(proxy, E, delta, 0.1)
    return r.proj_bound / r.proj_norm


def pipeline_projector_bounds(args, mapper):
    tasks = [(args.seed, i, args.n) for i in range(args.trials)]
    rows = list(mapper(_projector_one, tasks))
    res = RunResult()
    passed = sum(bool(r[-1]) for r in rows)
    res.check("projector_bounds_trials", passed == len(rows), passed, len(rows))
    probe = [[dp, two_level_probe(0.0, 0.5, dp)] for dp in (1.0, 0.75, 0.6, 0.55, 0.51, 0.501)]
    res.check("two_level_tightness", probe[-1][1] <= 2.0, probe[-1][1], 2.0)
    res.csv("projector_bounds.csv", ["trial", "n", "E", "delta", "eps", "a", "proj_norm",
                                     "proj_bound", "resolvent_norm", "resolvent_bound", "pass"], rows)
    res.csv("two_level_probe.csv", ["delta_prime", "ratio"], probe)
    return res


def pipeline_deloc_lowerbound(args, mapper):
    lo, hi = _floats(args.I)
    window = LatticeWindow(args.L)
    cfg = empty_config(window) if args.free else sample(_disorder(args), window, args.seed)
    rep = deloc_chain(cfg, (lo, hi), args.q, _floats(args.T), L_grid=_floats(args.L_grid),
                      budget=args.budget, mapper=mapper)
    res = RunResult(budget_exceeded=rep.budget_exceeded)
    for p in rep.points:
        res.check(f"chain[T={p.T:g},E={p.E:.6g}]", p.passed, p.lhs, p.rhs)
    res.check("growth_exponent", rep.exponent >= 0.8, rep.exponent, 0.8)
    rows = []
    for i, T in enumerate(rep.T):
        running = (float(np.polyfit(np.log(rep.T[:i + 1]), np.log(rep.M_lower[:i + 1]), 1)[0])
                   if i >= 1 else math.nan)
        for p in rep.points:
            if p.T == T:
                rows.append([T, p.E, p.N, rep.M_lower[i], running])
    res.csv("deloc.csv", ["T", "E", "N", "M_lower", "exponent_running"], rows)
    res.json("deloc.json", rep.to_dict())
    return res


def _cell_bound_one(task):
    n, z, samples, seed = task
    r = free_green_cell_bounds(n, (0, 0, 0), z, samples=samples, seed=seed)
    return [*map(int, n), r.pointwise_worst, r.chained_worst, r.averaged_value,
            r.averaged_bound, r.pointwise, r.averaged]


def pipeline_convolution_check(args, mapper):
    window = LatticeWindow(args.L)
    dist = window.distances()
    res = RunResult()
    conv = []
    for i in range(args.count):
        a = decaying_kernel(window, args.gamma, args.C, args.seed + i, 21)
        b = decaying_kernel(window, args.gamma, args.C, args.seed + i, 31)
        r = convolution_decay(a, b, args.C, args.gamma, dist)
        conv.append({"seed": args.seed + i, "max_ratio": r.max_ratio, "c_tilde": r.c_tilde,
                     "c_tilde_printed": r.c_tilde_printed, "pass": r.passed,
                     "pass_printed_constant": r.passed_printed})
        res.check(f"double_sum[seed={args.seed + i}]", r.passed, r.max_ratio, r.c_tilde)
    z = complex(_energy(args), args.kappa)
    cells = [tuple(s) for s in window.sites if np.any(s != 0)]
    rows = list(mapper(_cell_bound_one, [(c, z, args.samples, args.seed) for c in cells]))
    res.check("cell_bound_pointwise", all(r[7] for r in rows), max(max(r[3], r[4]) for r in rows), 1.0)
    res.check("cell_bound_averaged", all(r[8] for r in rows),
              max(r[5] / r[6] for r in rows), 1.0)
    res.json("convolution_check.json", {"double_sum": conv, "z": [z.real, z.imag]})
    res.csv("cell_bounds.csv", ["n1", "n2", "n3", "pointwise_worst", "chained_worst",
                                "averaged", "averaged_bound", "pointwise_pass", "averaged_pass"], rows)
    return res


# --------------------------------------------------------------------------
# argument parsing

def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output root (default $DELTALAB_OUT or ./deltalab-runs)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", default=None, help="key = value file overriding flags")


def _add_energy(p, default_E):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--E", type=eval_number, default=default_E, help="absolute energy")
    g.add_argument("--eps", type=float, default=None, help="energy offset above pi^2")


def _add_disorder(p):
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=2.0)
    p.add_argument("--shape", choices=("uniform", "truncated-bump"), default="uniform")
    p.add_argument("--p0", type=float, default=0.0)


def build_parser():
    parser = _Parser(prog="deltalab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"deltalab {__version__}")
    sub = parser.add_subparsers(dest="cmd", parser_class=_Parser)

    p = sub.add_parser("gamma-check", help="dissipativity certificate and inverse bound")
    _add_common(p); _add_energy(p, 2 * PI2); _add_disorder(p)
    p.add_argument("--kappa", type=float, default=0.5)
    p.add_argument("--L", type=int, default=2)
    p.add_argument("--count", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--constant", choices=("num", "parseval"), default="num")

    p = sub.add_parser("inverse-decay", help="entrywise exponential decay of inverses")
    _add_common(p); _add_energy(p, 2 * PI2); _add_disorder(p)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--L", type=int, default=4)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--margin", type=int, default=1)
    p.add_argument("--synthetic-d", type=int, default=0, choices=(0, 1, 2, 3))
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--C0", type=float, default=0.5)

    p = sub.add_parser("ct-fit", help="decay fit of cell-averaged Green's functions")
    _add_common(p); _add_disorder(p)
    p.add_argument("--energies", default="1.5pi2,2pi2")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--L", type=int, default=4)
    p.add_argument("--free", action="store_true")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--rmin", type=float, default=2.0)
    p.add_argument("--rmax", type=int, default=8)

    p = sub.add_parser("eigenmode-bounds", help="generalized eigenfunction checks")
    _add_common(p)
    p.add_argument("--eps-list", default="0.5,1,1pi2")
    p.add_argument("--q-list", default="3.5,4,6")
    p.add_argument("--L-list", default="5,10,20,40")

    p = sub.add_parser("transport-identity", help="time average versus resolvent formula")
    _add_common(p)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--T", default="0.5,5,50")
    p.add_argument("--vary", action="store_true", help="cycle sizes through 2..n")

    p = sub.add_parser("projector-bounds", help="spectral tail bounds on proxies")
    _add_common(p)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--trials", type=int, default=1000)

    p = sub.add_parser("deloc-lowerbound", help="moment lower-bound chain")
    _add_common(p); _add_disorder(p)
    p.add_argument("--free", action="store_true")
    p.add_argument("--L", type=int, default=1, help="half-width of the disorder window")
    p.add_argument("--I", default="1.5pi2,2pi2")
    p.add_argument("--q", type=float, default=4.0)
    p.add_argument("--T", default="2,4,8")
    p.add_argument("--L-grid", default="2,3,4,5")
    p.add_argument("--budget", type=float, default=1800.0, help="seconds")

    p = sub.add_parser("convolution-check", help="double-sum lemma and free cell bounds")
    _add_common(p); _add_energy(p, 2 * PI2)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--L", type=int, default=4)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--C", type=float, default=0.5)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--samples", type=int, default=200)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    return parser


COMMANDS = {
    "gamma-check": pipeline_gamma_check,
    "inverse-decay": pipeline_inverse_decay,
    "ct-fit": pipeline_ct_fit,
    "eigenmode-bounds": pipeline_eigenmode_bounds,
    "transport-identity": pipeline_transport_identity,
    "projector-bounds": pipeline_projector_bounds,
    "deloc-lowerbound": pipeline_deloc_lowerbound,
    "convolution-check": pipeline_convolution_check,
}

_RUNTIME_KEYS = ("cmd", "out", "workers", "config")


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment."""
    items = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        items.append((k.replace("_", "-"), v))
    return items


def _config_argv(items, subparser):
    flags = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            flags[opt.lstrip("-")] = action
    argv = []
    for key, value in items:
        action = flags.get(key)
        if action is None:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(f"--{key}")
        else:
            argv += [f"--{key}", value]
    return argv


def _subparser(parser, cmd):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[cmd]
    raise KeyError(cmd)


def parse(argv):
    parser = build_parser()
    if not argv:
        raise UsageError(parser.format_usage().strip())
    args = parser.parse_args(argv)
    if args.cmd is None:
        raise UsageError(parser.format_usage().strip())
    if args.cmd == "replay":
        return args
    if args.config:
        extra = _config_argv(read_config(args.config), _subparser(parser, args.cmd))
        args = parser.parse_args(list(argv) + extra)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    return args


def params_of(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _RUNTIME_KEYS}


def _argv_from_params(cmd, params):
    argv = [cmd]
    for k, v in params.items():
        flag = "--" + k.replace("_", "-")
        if isinstance(v, bool):
            if v:
                argv.append(flag)
        elif v is not None:
            argv += [flag, repr(v) if isinstance(v, float) else str(v)]
    return argv


def output_dir(args, params):
    root = args.out or os.environ.get("DELTALAB_OUT") or "deltalab-runs"
    digest = hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:10]
    return Path(root) / f"{args.cmd}-{digest}"


def _mapper(workers):
    if workers == 1:
        return map, None
    pool = ProcessPoolExecutor(max_workers=workers)
    return (lambda f, it: pool.map(f, it)), pool


def execute(args, stdout=sys.stdout):
    """Run a parsed command; returns the exit code."""
    params = params_of(args)
    mapper, pool = _mapper(args.workers)
    start = time.perf_counter()
    try:
        res = COMMANDS[args.cmd](args, mapper)
    except QuadratureError as exc:
        print(f"numerical budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    finally:
        if pool is not None:
            pool.shutdown()
    duration = time.perf_counter() - start
    manifest = {"cmd": args.cmd, "params": params, "seed": args.seed, "version": __version__,
                "duration_s": round(duration, 3), "files": sorted(res.files),
                "assertions": [a.to_dict() for a in res.assertions]}
    target = output_dir(args, params)
    try:
        target.mkdir(parents=True, exist_ok=True)
        for name, text in res.files.items():
            (target / name).write_text(text)
        (target / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True, default=_num) + "\n")
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    failed = [a for a in res.assertions if not a.passed]
    print(f"{args.cmd}: {len(res.assertions) - len(failed)}/{len(res.assertions)} assertions "
          f"passed -> {target}", file=stdout)
    for a in failed[:20]:
        print(f"  FAIL {a.name}: value={a.value:.6g} bound={a.bound:.6g}", file=stdout)
    if res.budget_exceeded:
        return EXIT_BUDGET
    return EXIT_ASSERT if failed else EXIT_OK


def run(argv):
    try:
        args = parse(argv)
        if args.cmd == "replay":
            try:
                manifest = json.loads(Path(args.manifest).read_text())
            except (OSError, ValueError) as exc:
                print(f"cannot read manifest: {exc}", file=sys.stderr)
                return EXIT_IO
            replay = _argv_from_params(manifest["cmd"], manifest["params"])
            replay += ["--workers", str(args.workers)]
            if args.out:
                replay += ["--out", args.out]
            args = parse(replay)
        return execute(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE


def main(argv=None):
    sys.exit(run(sys.argv[1:] if argv is None else argv))
