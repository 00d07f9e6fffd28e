"""Experiment orchestration: config parsing, subcommands, CSV and report emission.

Subcommands: check-noise, check-hypothesis, check-ou, solve-hjb, verify,
report.  All outputs are CSV (RFC 4180, '.' decimal separator) or the binary
solution file; ``report`` aggregates prior outputs into Markdown with
pass/fail lines and never mutates them.  Given a fixed seed, re-running any
subcommand reproduces byte-identical CSV bodies regardless of worker count.
"""

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np
import tomli

from . import control, hjb, ou, presets, serialize, spectrum, stable
from .errors import ConfigError, PicardDivergenceError
from .stable import RngStream
from .state import ProblemSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK_FAILED = 4

_SECTION_KEYS = {
    "model": {"n_modes", "alpha", "gamma_smooth", "schedule"},
    "problem": {"drift", "drift_params", "running_cost", "running_cost_params",
                "terminal_cost", "terminal_cost_params", "radius", "horizon"},
    "grid": {"box_halfwidth", "nodes_per_axis", "time_levels"},
    "mc": {"n_mc", "n_paths", "seed", "workers"},
    "solver": {"tol", "max_iter", "theta"},
    "checks": {"alpha_values", "h_values", "ecf_samples", "decay_points",
               "decay_t_min", "decay_t_max", "decay_n_mc", "generator_n_mc",
               "generator_t", "generator_probe", "hypothesis_tail_terms"},
    "verify": {"step", "n_constant_policies", "probe_t0", "probe_x"},
    "output": {"directory"},
}

_DEFAULTS = {
    "model": {"n_modes": 1, "alpha": 1.5, "gamma_smooth": 0.7, "schedule": "critical"},
    "problem": {"drift": "tanh", "drift_params": {"amplitude": 0.25},
                "running_cost": "gaussian-bump",
                "running_cost_params": {"amplitude": 0.5, "width": 1.0},
                "terminal_cost": "smoothed-ramp",
                "terminal_cost_params": {"amplitude": 1.0, "width": 1.0},
                "radius": 1.0, "horizon": 0.5},
    "grid": {"box_halfwidth": 4.0, "nodes_per_axis": 65, "time_levels": 16},
    "mc": {"n_mc": 20000, "n_paths": 10000, "seed": 0, "workers": 1},
    "solver": {"tol": 1e-4, "max_iter": 25, "theta": 0.3},
    "checks": {"alpha_values": [1.2, 1.5, 1.8], "h_values": [0.5, 1.0, 2.0],
               "ecf_samples": 1_000_000, "decay_points": 8, "decay_t_min": 1e-3,
               "decay_t_max": 1.0, "decay_n_mc": 20000,
               "generator_n_mc": 1_000_000, "generator_t": 1e-3,
               "generator_probe": 0.6, "hypothesis_tail_terms": 1000},
    "verify": {"step": None, "n_constant_policies": 9,
               "probe_t0": [0.0, 0.0, 0.0, 0.125, 0.25],
               "probe_x": [[0.0], [1.0], [-1.0], [0.5], [2.0]]},
    "output": {"directory": "out"},
}


class ExperimentConfig:
    """Validated experiment configuration backed by nested dicts."""

    def __init__(self, raw):
        unknown_sections = set(raw) - set(_SECTION_KEYS)
        if unknown_sections:
            raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")
        self.sections = {}
        for name, keys in _SECTION_KEYS.items():
            merged = dict(_DEFAULTS[name])
            given = raw.get(name, {})
            if not isinstance(given, dict):
                raise ConfigError(f"section [{name}] must be a table")
            extra = set(given) - keys
            if extra:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
            merged.update(given)
            self.sections[name] = merged

    def __getitem__(self, name):
        return self.sections[name]

    def build_model(self):
        m = self["model"]
        try:
            return spectrum.make_heat_dirichlet_model(
                m["n_modes"], m["alpha"], m["gamma_smooth"], m["schedule"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_problem(self, n_modes):
        p = self["problem"]
        try:
            drift = presets.drift_preset(p["drift"], n_modes, **p["drift_params"])
            g = presets.scalar_preset(p["running_cost"], n_modes,
                                      **p["running_cost_params"])
            h = presets.scalar_preset(p["terminal_cost"], n_modes,
                                      **p["terminal_cost_params"])
            problem = ProblemSpec(drift=drift, running_cost=g, terminal_cost=h,
                                  radius=p["radius"], horizon=p["horizon"])
            problem.validate(n_modes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return problem


def _parse_override(item):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw_value = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {key!r} must be section.key")
    try:
        value = tomli.loads(f"v = {raw_value}")["v"]
    except tomli.TOMLDecodeError:
        value = raw_value
    return parts[0], parts[1], value


def load_config(config_path, overrides=()):
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    for item in overrides:
        section, key, value = _parse_override(item)
        raw.setdefault(section, {})[key] = value
    return ExperimentConfig(raw)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def cmd_check_noise(cfg, outdir):
    checks = cfg["checks"]
    seed = cfg["mc"]["seed"]
    ecf_rows = []
    levy_rows = []
    for alpha in checks["alpha_values"]:
        report = stable.ecf_check(alpha, checks["h_values"], checks["ecf_samples"],
                                  RngStream(seed).derive("noise", round(alpha * 1000)))
        for i, h in enumerate(report.h_values):
            ecf_rows.append([alpha, h, report.ecf_real[i], report.ecf_imag[i],
                             report.target[i], report.abs_error[i]])
        identity = stable.jump_measure_normalization(alpha)
        levy_rows.append([alpha, stable.levy_constant(alpha), identity,
                          abs(identity - 1.0)])
    _write_csv(outdir / "ecf.csv",
               ["alpha", "h", "ecf_real", "ecf_imag", "target", "abs_error"], ecf_rows)
    _write_csv(outdir / "levy.csv",
               ["alpha", "c_alpha", "quadrature_identity", "abs_deviation"], levy_rows)
    return EXIT_OK


def cmd_check_hypothesis(cfg, outdir):
    model = cfg.build_model()
    report = spectrum.validate_hypothesis(model, cfg["checks"]["hypothesis_tail_terms"])
    _write_csv(outdir / "hypothesis.csv",
               ["n_modes", "alpha", "gamma_smooth", "schedule", "pointwise_ok",
                "series_partial", "tail_bound", "series_converges"],
               [[model.n_modes, model.alpha, model.gamma_smooth, model.schedule_id,
                 report.pointwise_ok, report.series_partial, report.tail_bound,
                 report.series_converges]])
    return EXIT_OK


def cmd_check_ou(cfg, outdir):
    checks = cfg["checks"]
    model = cfg.build_model()
    seed = cfg["mc"]["seed"]
    n_mc = cfg["mc"]["n_mc"]
    root = RngStream(seed)

    # semigroup identities at a few spots
    const = presets.scalar_preset("constant", model.n_modes, value=1.0)
    odd = presets.scalar_preset("sigmoid", model.n_modes, amplitude=1.0, width=1.0)
    x0 = np.zeros(model.n_modes)
    est_c, se_c = ou.semigroup_apply(model, const, 0.5, x0, n_mc, root.derive("sg", 0))
    est_o, se_o = ou.semigroup_apply(model, odd, 0.5, x0, n_mc, root.derive("sg", 1))
    rows = [["constant-preserved", est_c, se_c, 1.0],
            ["odd-symmetry-at-origin", est_o, se_o, 0.0],
            ["contraction-margin", abs(est_o), se_o, odd.bound]]
    _write_csv(outdir / "ou_semigroup.csv",
               ["check", "estimate", "std_error", "reference"], rows)

    # gradient decay fit
    steep = presets.scalar_preset("sigmoid", model.n_modes, amplitude=1.0, width=0.05)
    t_grid = np.geomspace(checks["decay_t_min"], checks["decay_t_max"],
                          checks["decay_points"])
    probes = [np.zeros(model.n_modes)]
    decay = ou.gradient_decay_check(model, steep, t_grid, probes,
                                    checks["decay_n_mc"], root.derive("decay"))
    _write_csv(outdir / "ou_decay.csv", ["t", "sup_grad", "std_err"],
               [[decay.t_grid[i], decay.sup_grad[i], decay.std_err[i]]
                for i in range(decay.t_grid.size)])
    _write_csv(outdir / "ou_decay_fit.csv",
               ["fitted_exponent", "lower_limit", "upper_limit", "passed"],
               [[decay.fitted_exponent, -model.gamma_smooth - 0.15, 0.0,
                 -model.gamma_smooth - 0.15 <= decay.fitted_exponent <= 0.0]])

    # generator consistency at small t
    bump = presets.scalar_preset("mollifier", model.n_modes, amplitude=1.0, support=2.0)
    xp = np.zeros(model.n_modes)
    xp[0] = checks["generator_probe"]
    t_small = checks["generator_t"]
    est, se = ou.semigroup_apply(model, bump, t_small, xp, checks["generator_n_mc"],
                                 root.derive("gen"))
    rate = (est - float(bump.eval(xp))) / t_small
    gen_val = ou.generator_apply(model, bump, xp)
    rel_gap = abs(rate - gen_val) / max(abs(gen_val), 1e-12)
    _write_csv(outdir / "ou_generator.csv",
               ["x_1", "t", "mc_rate", "mc_rate_std_error", "generator_value",
                "rel_gap"],
               [[xp[0], t_small, rate, se / t_small, gen_val, rel_gap]])
    return EXIT_OK


def cmd_solve_hjb(cfg, outdir):
    model = cfg.build_model()
    problem = cfg.build_problem(model.n_modes)
    grid = hjb.GridSpec(box_halfwidth=cfg["grid"]["box_halfwidth"],
                        nodes_per_axis=cfg["grid"]["nodes_per_axis"],
                        time_levels=cfg["grid"]["time_levels"])
    solver = cfg["solver"]
    try:
        solution = hjb.picard_solve(model, problem, grid,
                                    (cfg["mc"]["n_mc"], cfg["mc"]["seed"]),
                                    tol=solver["tol"], max_iter=solver["max_iter"],
                                    workers=cfg["mc"]["workers"])
    except PicardDivergenceError as exc:
        print(f"solve-hjb: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    serialize.save_solution(solution, outdir / "solution.hjb")
    _write_csv(outdir / "residuals.csv", ["sweep", "residual"],
               [[i + 1, r] for i, r in enumerate(solution.residual_history)])
    hist = solution.residual_history
    ratios = hist[1:] / hist[:-1] if hist.size > 1 else np.array([])
    u0_exact = bool(np.array_equal(
        solution.grid_fn.values[0],
        np.asarray(problem.terminal_cost.eval(
            solution.grid_fn.node_points()), dtype=float).reshape(
                solution.grid_fn.values[0].shape)))
    theta = solver["theta"]
    holder_rows = []
    if model.gamma_smooth * (1.0 + theta) < 1.0:
        for level in range(2, grid.time_levels + 1):
            semi = hjb.holder_seminorm(solution, level, theta)
            t_k = solution.grid_fn.time_grid[level]
            holder_rows.append([level, t_k, semi,
                                semi * t_k ** (model.gamma_smooth * (1 + theta))])
        _write_csv(outdir / "holder.csv",
                   ["level", "t", "seminorm", "weighted_seminorm"], holder_rows)
    _write_csv(outdir / "hjb_summary.csv",
               ["converged", "n_sweeps", "last_residual", "max_ratio",
                "c1gamma_norm", "clipped_fraction", "u0_equals_h"],
               [[solution.converged, hist.size, hist[-1],
                 float(np.max(ratios)) if ratios.size else 0.0,
                 solution.c1gamma_norm, solution.clipped_fraction, u0_exact]])
    return EXIT_OK if solution.converged else EXIT_NUMERIC


def _grid_budget(solution, problem):
    gf = solution.grid_fn
    grad_norms = np.linalg.norm(gf.gradients[1:], axis=-1)
    max_du = float(np.max(grad_norms))
    dt = gf.time_grid[1] - gf.time_grid[0]
    g_bound = problem.running_cost.bound or 0.0
    return (gf.spacing * max_du
            + dt * (problem.hamiltonian_lipschitz * max_du + g_bound))


def cmd_verify(cfg, outdir):
    solution_path = outdir / "solution.hjb"
    if not solution_path.is_file():
        raise ConfigError(f"no solution file at {solution_path}; run solve-hjb first")
    solution = serialize.load_solution(solution_path)
    model = cfg.build_model()
    problem = cfg.build_problem(model.n_modes)
    solution.problem = problem
    if not solution.converged:
        print("verify: solution is flagged non-converged", file=sys.stderr)
        return EXIT_NUMERIC

    vcfg = cfg["verify"]
    step = vcfg["step"] or problem.horizon / cfg["grid"]["time_levels"]
    n_paths = cfg["mc"]["n_paths"]
    seed = cfg["mc"]["seed"]
    family = control.constant_policy_family(vcfg["n_constant_policies"],
                                            problem.radius, model.n_modes)
    names = [f"constant[{i}]" for i in range(len(family))]
    family.append(control.extract_feedback(solution))
    names.append("feedback")

    budget = _grid_budget(solution, problem)
    rows = []
    all_ok = True
    for pi, (t0, x) in enumerate(zip(vcfg["probe_t0"], vcfg["probe_x"])):
        x = np.asarray(x, dtype=float)
        for name, policy in zip(names, family):
            res = control.fundamental_residual(
                model, problem, solution, policy, t0, x, step, n_paths,
                RngStream(seed).derive("verify", pi))
            dominance = res.lhs <= (res.rhs.mean + 3.0 * res.rhs.std_error + budget)
            attainment = True
            if name == "feedback":
                attainment = (abs(res.lhs - res.rhs.mean)
                              <= 3.0 * res.rhs.std_error + budget)
            all_ok = all_ok and dominance and attainment
            rows.append([name, t0] + [float(v) for v in x]
                        + [res.lhs, res.rhs.mean, res.rhs.std_error,
                           res.bracket_mean, res.bracket_std_error,
                           res.rhs.clipped_fraction, budget, dominance, attainment])
    n_modes = model.n_modes
    _write_csv(outdir / "verify.csv",
               ["policy", "t0"] + [f"x_{i + 1}" for i in range(n_modes)]
               + ["lhs", "rhs_mean", "rhs_std_error", "bracket_mean",
                  "bracket_std_error", "clipped_fraction", "grid_budget",
                  "dominance_ok", "attainment_ok"], rows)
    return EXIT_OK if all_ok else EXIT_CHECK_FAILED


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def cmd_report(cfg, outdir):
    lines = ["# Verification report", ""]
    failures = 0

    def check(name, passed, detail):
        nonlocal failures
        status = "PASS" if passed else "FAIL"
        if not passed:
            failures += 1
        lines.append(f"- **{status}** {name}: {detail}")

    ecf_path = outdir / "ecf.csv"
    if ecf_path.is_file():
        _, rows = _read_csv(ecf_path)
        worst = max(float(r[5]) for r in rows)
        check("noise law (ecf)", worst < 0.01, f"max |ecf - exp(-|h|^alpha)| = {worst:.3e}")
    levy_path = outdir / "levy.csv"
    if levy_path.is_file():
        _, rows = _read_csv(levy_path)
        worst = max(float(r[3]) for r in rows)
        check("jump-measure normalization", worst < 1e-6,
              f"max |integral - 1| = {worst:.3e}")
    hyp_path = outdir / "hypothesis.csv"
    if hyp_path.is_file():
        _, rows = _read_csv(hyp_path)
        ok = rows[0][4] == "true" and rows[0][7] == "true"
        check("coefficient bounds and series convergence", ok,
              f"pointwise_ok={rows[0][4]}, series_converges={rows[0][7]}")
    fit_path = outdir / "ou_decay_fit.csv"
    if fit_path.is_file():
        _, rows = _read_csv(fit_path)
        check("gradient decay exponent", rows[0][3] == "true",
              f"fitted exponent {float(rows[0][0]):.4f} in "
              f"[{float(rows[0][1]):.4f}, {float(rows[0][2]):.4f}]")
    gen_path = outdir / "ou_generator.csv"
    if gen_path.is_file():
        _, rows = _read_csv(gen_path)
        gap = float(rows[0][5])
        check("generator consistency", gap < 0.05, f"relative gap = {gap:.4f}")
    hjb_path = outdir / "hjb_summary.csv"
    if hjb_path.is_file():
        _, rows = _read_csv(hjb_path)
        converged = rows[0][0] == "true"
        ratio = float(rows[0][3])
        u0 = rows[0][6] == "true"
        check("HJB fixed point", converged and u0 and ratio <= 0.9,
              f"converged={rows[0][0]}, max residual ratio={ratio:.4f}, "
              f"u(0,.)=h exact={rows[0][6]}")
    holder_path = outdir / "holder.csv"
    if holder_path.is_file():
        _, rows = _read_csv(holder_path)
        weighted = [float(r[3]) for r in rows]
        spread = max(weighted) / max(min(weighted), 1e-300)
        check("Hoelder gradient diagnostic", spread < 3.0,
              f"weighted seminorm spread across levels = {spread:.3f}")
    verify_path = outdir / "verify.csv"
    if verify_path.is_file():
        _, rows = _read_csv(verify_path)
        dom = all(r[-2] == "true" for r in rows)
        att = all(r[-1] == "true" for r in rows)
        check("value dominance", dom, f"{len(rows)} policy/probe rows")
        check("feedback attainment", att,
              "feedback cost matches u within the reported budget")

    lines.append("")
    lines.append(f"{failures} failing check(s)." if failures else "All checks passed.")
    (outdir / "report.md").write_text("\n".join(lines) + "\n")
    return EXIT_CHECK_FAILED if failures else EXIT_OK


_COMMANDS = {
    "check-noise": cmd_check_noise,
    "check-hypothesis": cmd_check_hypothesis,
    "check-ou": cmd_check_ou,
    "solve-hjb": cmd_solve_hjb,
    "verify": cmd_verify,
    "report": cmd_report,
}


def run(subcommand, config_path, overrides=(), out=None):
    """Execute one subcommand; returns the process exit status."""
    if subcommand not in _COMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cfg = load_config(config_path, overrides)
    outdir = Path(out) if out is not None else Path(cfg["output"]["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    return _COMMANDS[subcommand](cfg, outdir)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stablehjb",
        description="Checks and solvers for stable-noise stochastic control")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config entry")
        p.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    try:
        return run(args.subcommand, args.config, args.overrides, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PicardDivergenceError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
