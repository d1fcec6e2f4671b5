"""Acceptance criteria, one test per criterion.

Each test appends a single PASS/FAIL line that is printed in the terminal
summary, then asserts.  Tolerances are the ones fixed by the criteria.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from deltalab.cli import EXIT_OK, run
from deltalab.decay import (combes_thomas_fit, gamma_mu_star, inverse_decay_check,
                            max_conjugation_diagnostic, mu_star, synthetic_decay_matrix,
                            verify_offdiag_decay)
from deltalab.disorder import DisorderSpec, empty_config, sample
from deltalab.green import EnergyPoint, assemble_gamma, c_num, c_parseval
from deltalab.lattice import LatticeWindow
from deltalab.numerics import operator_norm

pytestmark = pytest.mark.acceptance
PI2 = math.pi ** 2


def report(num, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {num}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    assert passed, line


def _manifest(root):
    (path,) = list(root.glob("*/manifest.json"))
    return path, json.loads(path.read_text())


def _cli(tmp_path, name, argv):
    out = tmp_path / name
    code = run(argv + ["--out", str(out)])
    path, m = _manifest(out)
    return code, path, m


# ---------------------------------------------------------------- 1 and 2

def _gamma_ensemble():
    rng = np.random.default_rng(20240101)
    cases = []
    for i in range(50):
        E = float(rng.uniform(PI2 + 0.5, 4 * PI2))
        kappa = float(rng.uniform(0.1, 2.0))
        L = int(rng.choice([2, 3, 4]))
        p0 = float(rng.choice([0.0, 0.3]))
        cases.append((E, kappa, L, p0, 1000 + i))
    return cases


@pytest.fixture(scope="module")
def gamma_ensemble():
    start = time.perf_counter()
    rows = []
    for E, kappa, L, p0, seed in _gamma_ensemble():
        system = assemble_gamma(sample(DisorderSpec(p0=p0), LatticeWindow(L), seed),
                                EnergyPoint(E, kappa))
        lam = system.lambda_min
        rows.append({"E": E, "kappa": kappa, "L": L, "lam": lam,
                     "inv": system.inverse_norm, "c_num": c_num(E, kappa),
                     "c_parseval": c_parseval(E, kappa)})
    return rows, time.perf_counter() - start


def test_criterion_1_dissipativity_literal_constant(gamma_ensemble):
    rows, elapsed = gamma_ensemble
    ok = [r["lam"] >= r["c_num"] * r["kappa"] for r in rows]
    worst = min(r["lam"] / (r["c_num"] * r["kappa"]) for r in rows)
    report(1, "lambda_min(-Im Gamma) >= c_num kappa, 50 configs, < 120 s",
           all(ok) and elapsed < 120,
           f"{sum(ok)}/50 pass, min lambda/(c_num kappa) = {worst:.4g}, {elapsed:.1f} s")


def test_criterion_1b_dissipativity_normalized_constant(gamma_ensemble):
    rows, elapsed = gamma_ensemble
    ok = [r["lam"] >= r["c_parseval"] * r["kappa"] for r in rows]
    worst = min(r["lam"] / (r["c_parseval"] * r["kappa"]) for r in rows)
    report("1b", "same ensemble with the Parseval-normalized constant",
           all(ok) and elapsed < 120,
           f"{sum(ok)}/50 pass, min ratio = {worst:.4g}, {elapsed:.1f} s")


def test_criterion_2_inverse_bound(gamma_ensemble):
    rows, _ = gamma_ensemble
    ratio = [r["inv"] * r["lam"] for r in rows]
    ok = [x <= 1 + 1e-10 for x in ratio]
    report(2, "||Gamma^-1|| <= 1/lambda_min (rel 1e-10)", all(ok),
           f"{sum(ok)}/50 pass, max ||Gamma^-1|| lambda_min = {max(ratio):.6f}")


# ---------------------------------------------------------------- 3

def test_criterion_3_inverse_decay():
    window = LatticeWindow(4)
    dist_full = window.distances()
    interior = window.interior(1)
    worst, diag, fails = 0.0, 0.0, 0
    for seed in range(20):
        cfg = sample(DisorderSpec(), window, seed)
        s = assemble_gamma(cfg, EnergyPoint(2 * PI2, 1.0))
        keep = cfg.active
        dist = dist_full[np.ix_(keep, keep)]
        rho, mu = s.inverse_norm, gamma_mu_star(s)
        rep = inverse_decay_check(s.matrix, rho, mu, dist, interior[keep])
        d = max_conjugation_diagnostic(s.matrix, mu, rho, dist)
        worst, diag = max(worst, rep.worst_ratio_interior), max(diag, d)
        fails += (not rep.passed_interior) + (d > 0.5)
    synth = {1: LatticeWindow(20, 1), 2: LatticeWindow(4, 2), 3: LatticeWindow(2, 3)}
    gamma, C0 = 1.0, 0.5
    for d, w in synth.items():
        dist = w.distances()
        for seed in range(100):
            A = synthetic_decay_matrix(w, gamma, C0, seed)
            assert verify_offdiag_decay(A, dist, C0, gamma)
            rho = operator_norm(np.linalg.inv(A))
            mu = mu_star(rho, gamma, C0, d)
            rep = inverse_decay_check(A, rho, mu, dist, w.interior(1))
            dg = max_conjugation_diagnostic(A, mu, rho, dist)
            worst, diag = max(worst, rep.worst_ratio_interior), max(diag, dg)
            fails += (not rep.passed_interior) + (dg > 0.5)
    report(3, "|Gamma^-1_nm| <= 2 rho exp(-mu_star |n-m|), 20 Gamma + 300 synthetic",
           fails == 0, f"failures = {fails}, worst ratio = {worst:.4g}, max diagnostic = {diag:.4g}")


# ---------------------------------------------------------------- 4

def test_criterion_4_combes_thomas():
    start = time.perf_counter()
    window = LatticeWindow(4)
    configs = {"free": empty_config(window), "random": sample(DisorderSpec(), window, 1)}
    parts, ok = [], True
    for name, cfg in configs.items():
        for E in (1.5 * PI2, 2 * PI2):
            fit = combes_thomas_fit(assemble_gamma(cfg, EnergyPoint(E, 1.0)))
            good = fit.fit.rate > 0 and fit.fit.r_squared >= 0.98 and fit.passed
            ok &= good
            parts.append(f"{name} E={E:.4g}: rate {fit.fit.rate:.3f} (>= {0.8 * fit.reference_rate:.3g})"
                         f" r2 {fit.fit.r_squared:.4f}")
    elapsed = time.perf_counter() - start
    report(4, "cell-averaged |G| decay fits, r2 >= 0.98, rate >= 0.8 min(tau, mu_star), < 600 s",
           ok and elapsed < 600, "; ".join(parts) + f"; {elapsed:.0f} s")


# ---------------------------------------------------------------- 5-8 via the CLI

def test_criterion_5_transport_identity(tmp_path):
    code, path, m = _cli(tmp_path, "c5", ["transport-identity", "--n", "12", "--vary",
                                           "--trials", "100", "--T", "0.5,5,50"])
    rows = (path.parent / "transport_identity.csv").read_text().splitlines()[1:]
    worst = m["assertions"][0]["value"]
    report(5, "time average = resolvent formula to 1e-6, 100 proxies x 3 T",
           code == EXIT_OK and len(rows) == 300, f"{len(rows)} cases, max rel err = {worst:.3g}")


def test_criterion_6_projector_bounds(tmp_path):
    code, path, m = _cli(tmp_path, "c6", ["projector-bounds", "--trials", "1000"])
    trials = next(a for a in m["assertions"] if a["name"] == "projector_bounds_trials")
    report(6, "spectral tail bounds, 1000 proxy trials", code == EXIT_OK,
           f"{trials['value']}/{trials['bound']} pass")


def test_criterion_7_generalized_modes(tmp_path):
    code, path, m = _cli(tmp_path, "c7", ["eigenmode-bounds", "--eps-list", "0.5,1,1pi2",
                                           "--q-list", "3.5,4,6", "--L-list", "5,10,20,40"])
    a = {x["name"]: x for x in m["assertions"]}
    failed = [n for n, x in a.items() if not x["pass"]]
    report(7, "mode suite (lattice zeros, normalization, fd order, drift, weighted norm, overlap)",
           code == EXIT_OK and not failed,
           f"{len(a) - len(failed)}/{len(a)} pass, fd order {a['fd_order']['value']:.3f}, "
           f"A0 drift {a['commutator_drift']['value']:.4f}")


def test_criterion_8_double_sum_and_cell_bounds(tmp_path):
    code, path, m = _cli(tmp_path, "c8", ["convolution-check", "--L", "4", "--count", "3"])
    data = json.loads((path.parent / "convolution_check.json").read_text())
    printed = ", ".join(f"{d['max_ratio']:.3g} vs C~ {d['c_tilde']:.4g} (printed C^2/g^3 = "
                      f"{d['c_tilde_printed']:.3g}: {'ok' if d['pass_printed_constant'] else 'exceeded'})"
                      for d in data["double_sum"])
    report(8, "double-sum lemma and free cell bounds on L = 4", code == EXIT_OK,
           f"{sum(x['pass'] for x in m['assertions'])}/{len(m['assertions'])} pass; {printed}")


# ---------------------------------------------------------------- 9

def test_criterion_9_delocalization(tmp_path):
    start = time.perf_counter()
    base = ["deloc-lowerbound", "--I", "1.5pi2,2pi2", "--q", "4", "--T", "2,4,8"]
    parts, ok = [], True
    for name, extra in (("free", ["--free"]), ("random", ["--L", "1", "--seed", "7"])):
        code, path, m = _cli(tmp_path, name, base + extra)
        rep = json.loads((path.parent / "deloc.json").read_text())
        chain = [a for a in m["assertions"] if a["name"].startswith("chain")]
        good = code == EXIT_OK and rep["chain_holds"] and rep["exponent"] >= 0.8
        ok &= good
        parts.append(f"{name}: chain {sum(a['pass'] for a in chain)}/{len(chain)}, "
                     f"exponent {rep['exponent']:.3f}")
    elapsed = time.perf_counter() - start
    report(9, "projector-free chain at every grid point, growth exponent >= 0.8, <= 1800 s",
           ok and elapsed <= 1800, "; ".join(parts) + f"; {elapsed:.0f} s")


# ---------------------------------------------------------------- 10

DETERMINISM_RUNS = [
    ["gamma-check", "--L", "2", "--count", "4", "--constant", "parseval"],
    ["inverse-decay", "--L", "2", "--count", "4"],
    ["inverse-decay", "--synthetic-d", "2", "--L", "3", "--count", "4"],
    ["ct-fit", "--L", "1", "--rmax", "4", "--energies", "2pi2"],
    ["eigenmode-bounds", "--L-list", "5,10"],
    ["transport-identity", "--trials", "8", "--vary"],
    ["projector-bounds", "--trials", "50"],
    ["deloc-lowerbound", "--free", "--T", "2,4", "--L-grid", "2,3"],
    ["convolution-check", "--L", "2"],
]


def _strip(m):
    return {k: v for k, v in m.items() if k != "duration_s"}


def test_criterion_10_determinism(tmp_path):
    mismatches = []
    for i, argv in enumerate(DETERMINISM_RUNS):
        outs = {}
        for workers in ("1", "8"):
            root = tmp_path / f"{i}-w{workers}"
            run(argv + ["--workers", workers, "--out", str(root)])
            outs[workers] = _manifest(root)
        (p1, m1), (p8, m8) = outs["1"], outs["8"]
        replay = tmp_path / f"{i}-replay"
        run(["replay", str(p1), "--workers", "8", "--out", str(replay)])
        pr, mr = _manifest(replay)
        for other_path, other in ((p8, m8), (pr, mr)):
            if _strip(other) != _strip(m1):
                mismatches.append(f"{argv[0]} manifest")
            for name in m1["files"]:
                if (p1.parent / name).read_bytes() != (other_path.parent / name).read_bytes():
                    mismatches.append(f"{argv[0]}/{name}")
    report(10, "outputs byte-identical across 1 and 8 workers and on replay",
           not mismatches, f"{len(DETERMINISM_RUNS)} commands, mismatches: {mismatches or 'none'} "
                           "(duration_s excluded)")
