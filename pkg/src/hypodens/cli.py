"""Batch experiment runner.

Subcommands: norm, simulate, decompose, support, covariance, density, verify.
Every artifact is a CSV (or two-column plot-data file) stamped with the config
hash, the seed and the active kernel backend; reports are byte-identical
across reruns of the same (config, seed) while wall-clock timings go to a
separate, explicitly non-deterministic file.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, _backend, acceptance, decomp, density, fields, paths, sde
from .config import ExperimentConfig, config_hash, load_config, serialize_config
from .errors import ConfigError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_UNKNOWN_MODEL = 3
EXIT_BAD_CONFIG = 4
EXIT_UNWRITABLE = 5


# ---------------------------------------------------------------------------
# artifact emission
# ---------------------------------------------------------------------------

def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ArtifactWriter:
    """Writes stamped CSVs / plot data / reports into the output directory."""

    def __init__(self, out_dir, cfg):
        self.out_dir = out_dir
        self.stamp = (f"# hypodens {__version__} config={config_hash(cfg)} "
                      f"seed={cfg.seed} backend={_backend.backend_name()}")
        if out_dir is None:
            return
        try:
            os.makedirs(out_dir, exist_ok=True)
            probe = os.path.join(out_dir, ".write-probe")
            with open(probe, "w") as fh:
                fh.write("ok")
            os.remove(probe)
        except OSError as exc:
            raise SystemExit(
                f"error: output directory '{out_dir}' is not writable ({exc})"
            ) from None

    def csv(self, name, header, rows):
        if self.out_dir is None:
            return None
        path = os.path.join(self.out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.stamp + "\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(row[h]) for h in header) + "\n")
        return path

    def plot_data(self, name, xs, ys):
        """Two-column data file consumable by any plotting tool."""
        if self.out_dir is None:
            return None
        path = os.path.join(self.out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.stamp + "\n")
            for x, y in zip(xs, ys):
                fh.write(f"{_fmt(float(x))} {_fmt(float(y))}\n")
        return path

    def text(self, name, content):
        if self.out_dir is None:
            return None
        path = os.path.join(self.out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(content)
        return path


def emit_report(results, cfg):
    """Deterministic per-criterion report text (no wall-clock content)."""
    if not results:
        raise ValueError("no completed suites; refusing to emit an empty report")
    lines = [
        "hypodens verification report",
        f"config={config_hash(cfg)} seed={cfg.seed} backend={_backend.backend_name()}",
        "-" * 78,
    ]
    lines.extend(r.line() for r in results)
    lines.append("-" * 78)
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} criteria passed")
    return "\n".join(lines) + "\n"


def emit_timings(results):
    lines = ["# wall-clock timings (not covered by the determinism contract)"]
    lines.extend(f"criterion {r.ident:2d}: {r.runtime_s:10.3f} s" for r in results)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _parse_floats(text):
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="hypodens",
        description="Small-time density experiments for hypoelliptic diffusions")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="config file (overridden by flags)")
        p.add_argument("--model", help="built-in model name")
        p.add_argument("--x0", help="start point, comma separated")
        p.add_argument("--delta-grid", help="comma separated deltas")
        p.add_argument("--paths", type=int, help="Monte Carlo paths per delta")
        p.add_argument("--steps", type=int, help="fine steps per sub-interval")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--eps-grid", help="comma separated epsilons")
        p.add_argument("--rho", type=float, help="support-set exponent rho")
        p.add_argument("--r", type=float, help="anisotropic ball radius")
        p.add_argument("--p", type=float, dest="p_exponent", help="tail exponent")
        p.add_argument("--centering", choices=("x0", "x0+bdelta"))
        p.add_argument("--out", help="output directory")
        p.add_argument("--convention-v", choices=decomp.V_CONVENTIONS,
                       dest="v_convention")
        p.add_argument("--convention-qp", choices=("p-block", "i-block"),
                       dest="qp_convention")
        return p

    p_norm = add_common(sub.add_parser("norm", help="anisotropic norm tables"))
    p_norm.add_argument("--delta", type=float, help="single delta for the norm")
    p_norm.add_argument("--y", help="vector, comma separated")
    p_norm.add_argument("--t", type=float, default=0.0, help="time of A(t, x)")

    add_common(sub.add_parser("simulate", help="scaled endpoint samples"))
    add_common(sub.add_parser("decompose", help="key-decomposition residual suites"))
    add_common(sub.add_parser("support", help="support-set statistics"))
    add_common(sub.add_parser("covariance", help="Malliavin spectrum quantiles"))
    add_common(sub.add_parser("density", help="exponent, lower and tail suites"))
    p_verify = add_common(sub.add_parser("verify", help="full acceptance run"))
    p_verify.add_argument("--only", help="comma separated criterion numbers")
    return parser


def _config_from_args(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        "model": args.model,
        "x0": _parse_floats(args.x0) if args.x0 else None,
        "delta_grid": _parse_floats(args.delta_grid) if args.delta_grid else None,
        "n_paths": args.paths,
        "steps_per_sub": args.steps,
        "seed": args.seed,
        "eps_grid": _parse_floats(args.eps_grid) if args.eps_grid else None,
        "rho": args.rho,
        "r": args.r,
        "p_exponent": args.p_exponent,
        "centering": args.centering,
        "output_dir": args.out,
        "v_convention": args.v_convention,
        "qp_convention": args.qp_convention,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_norm(args, cfg, writer):
    model = cfg.build_model()
    x0 = cfg.x0_vector(model)
    t = getattr(args, "t", 0.0)
    A = fields.directional_matrix(model, t, x0)
    rows = []
    deltas = [args.delta] if getattr(args, "delta", None) else cfg.delta_grid
    for delta in deltas:
        Ad = fields.scale_matrix(A, delta)
        ext = fields.gamma_extension(Ad)
        rows.append({
            "delta": float(delta),
            "lambda_min": Ad.lambda_min(),
            "lambda_max": Ad.lambda_max(),
            "det_alpha": ext.det_alpha,
            "dim_span_sigma": fields.dim_span_sigma(model, t, x0),
            "hoermander_lambda": fields.hoermander_lambda(A),
        })
    writer.csv("fields_table.csv",
               ["delta", "lambda_min", "lambda_max", "det_alpha",
                "dim_span_sigma", "hoermander_lambda"], rows)
    if getattr(args, "y", None):
        y = np.asarray(_parse_floats(args.y))
        if y.size != model.n:
            raise ConfigError(f"y has length {y.size}, model dimension {model.n}",
                              field="y")
        delta = args.delta if args.delta else cfg.delta_grid[0]
        value = fields.aniso_norm(fields.scale_matrix(A, delta), y)
        print(f"{value:.7g}")
    return EXIT_OK


def _cmd_simulate(args, cfg, writer):
    model = cfg.build_model()
    x0 = cfg.x0_vector(model)
    for delta in cfg.delta_grid:
        est = density.sample_scaled_endpoints(
            model, x0, delta, cfg.n_paths, cfg.seed, centering=cfg.centering,
            steps_per_sub=cfg.steps_per_sub)
        header = [f"f{i + 1}" for i in range(est.n)]
        rows = [{h: float(v) for h, v in zip(header, row)} for row in est.samples]
        writer.csv(f"samples_delta{delta:g}.csv", header, rows)
        mom = est.moments()
        print(f"delta={delta:g}: n={est.samples.shape[0]} blowups={est.n_blowups} "
              f"mean={np.round(mom['mean'], 4).tolist()} "
              f"var={np.round(mom['var'], 4).tolist()}")
    return EXIT_OK


def _cmd_decompose(args, cfg, writer):
    model = cfg.build_model()
    x0 = cfg.x0_vector(model)
    A = fields.directional_matrix(model, 0.0, x0)
    rows = []
    for delta in cfg.delta_grid:
        for steps in (cfg.steps_per_sub, 2 * cfg.steps_per_sub):
            n_paths = min(cfg.n_paths, 2000)
            dw = paths.sample_increments(cfg.seed, n_paths, model.d, delta,
                                         steps, stream="decomp")
            values = paths.path_values_from_increments(dw)
            bundle = decomp.taylor_principal(model, x0, values, delta,
                                             v_convention=cfg.v_convention)
            res = decomp.verify_key_decomposition(bundle, A)
            rows.append({"model": model.name, "delta": float(delta),
                         "steps": steps,
                         "rms_residual": float(np.sqrt(np.mean(res ** 2)))})
    writer.csv("decomposition.csv", ["model", "delta", "steps", "rms_residual"],
               rows)
    rem = decomp.remainder_scaling(model, x0, cfg.delta_grid,
                                   min(cfg.n_paths, 10_000), cfg.seed,
                                   steps_per_sub=cfg.steps_per_sub)
    writer.csv("remainder.csv", ["delta", "rms"], rem["rows"])
    if rem["slope"] is not None:
        writer.plot_data("plot_remainder.dat",
                         np.log([r["delta"] for r in rem["rows"] if r["rms"] > 0]),
                         np.log([r["rms"] for r in rem["rows"] if r["rms"] > 0]))
        print(f"remainder slope: {rem['slope']:.4f} (se {rem['slope_se']:.4f})")
    else:
        print("remainder slope: degenerate (zero RMS)")
    rng = np.random.default_rng(cfg.seed)
    inv_rows = []
    for k in range(200):
        m_dim = int(rng.choice([1, 2, 4]))
        lin = rng.normal(size=(m_dim, m_dim)) * 0.1
        if np.linalg.norm(lin, 2) > 0.5:
            continue
        em = decomp.EtaMap(lin, rng.normal(size=(m_dim, m_dim, m_dim)) * 0.5)
        y = rng.normal(size=m_dim)
        y *= rng.uniform(0.0, 0.5) * em.h_eta() / max(np.linalg.norm(y), 1e-300)
        theta = decomp.local_inverse(em, y)
        inv_rows.append({"case": k, "m": m_dim,
                         "residual": float(np.linalg.norm(theta + em(theta) - y))})
    writer.csv("inverse_tests.csv", ["case", "m", "residual"], inv_rows)
    return EXIT_OK


def _cmd_support(args, cfg, writer):
    model = cfg.build_model()
    stats = paths.support_statistics(model.d, cfg.eps_grid, cfg.rho,
                                     cfg.n_paths, cfg.seed,
                                     convention=cfg.qp_convention)
    header = ["epsilon", "n", "hits", "p_hat", "ci_lo", "ci_hi"]
    writer.csv("support_upsilon.csv", header, stats["upsilon"])
    writer.csv("support_lambda.csv", header, stats["lambda"])
    for key in ("upsilon", "lambda"):
        info = stats[f"{key}_slope"]
        print(f"{key}: slope="
              + (f"{info['slope']:.4f} (se {info['se']:.4f})" if info else "censored"))
    moments = paths.detq_inverse_moments((0.5, 1.0, 2.0),
                                         min(cfg.n_paths, 200_000), cfg.seed,
                                         d=model.d)
    writer.csv("detq_moments.csv", ["p", "n", "mean", "half1", "half2"], moments)
    return EXIT_OK


def _cmd_covariance(args, cfg, writer):
    model = cfg.build_model()
    x0 = cfg.x0_vector(model)
    rows = []
    for delta in cfg.delta_grid:
        lam = sde.malliavin_spectrum(model, x0, delta, cfg.n_paths, cfg.seed,
                                     steps_per_sub=cfg.steps_per_sub)
        rows.append({"delta": float(delta), "n_paths": cfg.n_paths,
                     "q05": float(np.quantile(lam, 0.05)),
                     "q25": float(np.quantile(lam, 0.25)),
                     "median": float(np.median(lam)),
                     "q75": float(np.quantile(lam, 0.75))})
        print(f"delta={delta:g}: median lambda_*={rows[-1]['median']:.5f}")
    writer.csv("covariance.csv",
               ["delta", "n_paths", "q05", "q25", "median", "q75"], rows)
    return EXIT_OK


def _cmd_density(args, cfg, writer):
    model = cfg.build_model()
    x0 = cfg.x0_vector(model)
    cache = {}
    diag = density.diagonal_exponent(model, x0, cfg.delta_grid, cfg.n_paths,
                                     cfg.seed, steps_per_sub=cfg.steps_per_sub,
                                     endpoint_cache=cache)
    writer.csv("diagonal.csv", ["delta", "p_hat", "det_alpha", "censored"],
               diag["rows"])
    live = [r for r in diag["rows"] if not r["censored"]]
    writer.plot_data("plot_diagonal.dat",
                     np.log([r["delta"] for r in live]),
                     np.log([r["p_hat"] for r in live]))
    if diag["slope"] is not None:
        print(f"diagonal slope: {diag['slope']:.4f} (se {diag['se']:.4f}, "
              f"expected {diag['expected_slope']:.2f})")
    lower = density.lower_bound_check(model, x0, cfg.r, cfg.delta_grid,
                                      cfg.n_paths, cfg.seed,
                                      steps_per_sub=cfg.steps_per_sub,
                                      centering=cfg.centering,
                                      endpoint_cache=cache)
    writer.csv("lower_bound.csv",
               ["delta", "min_stat", "argmin_norm", "center_stat",
                "ratio_to_largest_delta"], lower["rows"])
    tail = density.tail_check(model, x0, cfg.p_exponent, cfg.delta_grid,
                              cfg.n_paths, cfg.seed,
                              steps_per_sub=cfg.steps_per_sub,
                              endpoint_cache=cache)
    header = ["delta", "sup_stat", "sup_stat_recentered", "recenter_ratio"]
    if any("sup_stat_exp" in r for r in tail["rows"]):
        header += ["exp_decay_c", "sup_stat_exp"]
        for r in tail["rows"]:
            r.setdefault("exp_decay_c", float("nan"))
            r.setdefault("sup_stat_exp", float("nan"))
    writer.csv("tail.csv", header, tail["rows"])
    mesh = density.mesh_table(model, x0, cfg.p_exponent, cfg.delta_grid,
                              cfg.n_paths, cfg.seed,
                              steps_per_sub=cfg.steps_per_sub,
                              endpoint_cache=cache)
    writer.csv("mesh.csv",
               ["delta", "y_mesh_id", "norm_A_delta", "p_hat",
                "normalized_stat"], mesh)
    ratios = [r["ratio_to_largest_delta"] for r in lower["rows"]]
    slope_ok = (diag["slope"] is not None
                and abs(diag["slope"] - diag["expected_slope"]) <= 0.15)
    checks = [
        ("diagonal_slope", slope_ok,
         f"{diag['slope']!r} vs {diag['expected_slope']!r}"),
        ("lower_uniformity", min(ratios) >= 0.5, repr(min(ratios))),
        ("tail_spread", tail["sup_spread"] < 10.0, repr(tail["sup_spread"])),
        ("recenter_ratio", tail["max_recenter_ratio"] < 3.0,
         repr(tail["max_recenter_ratio"])),
    ]
    summary = ["[density_summary]",
               f"model = \"{model.name}\"",
               f"slope = {diag['slope']!r}",
               f"slope_se = {diag['se']!r}",
               f"expected_slope = {diag['expected_slope']!r}"]
    for name, ok, val in checks:
        status = '"pass"' if ok else '"fail"'
        summary.append(f"{name} = {status}  # {val}")
    writer.text("density_summary.txt", "\n".join(summary) + "\n")
    print(f"tail sup spread: {tail['sup_spread']:.4f}; "
          f"recenter ratio: {tail['max_recenter_ratio']:.4f}")
    return EXIT_OK


def _cmd_verify(args, cfg, writer):
    only = None
    if getattr(args, "only", None):
        only = {int(tok) for tok in args.only.split(",") if tok.strip()}
    results = acceptance.run_acceptance(seed=cfg.seed,
                                        n_paths_density=cfg.n_paths, only=only)
    report = emit_report(results, cfg)
    sys.stdout.write(report)
    writer.text("report.txt", report)
    writer.text("timings.txt", emit_timings(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


_COMMANDS = {
    "norm": _cmd_norm,
    "simulate": _cmd_simulate,
    "decompose": _cmd_decompose,
    "support": _cmd_support,
    "covariance": _cmd_covariance,
    "density": _cmd_density,
    "verify": _cmd_verify,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        model_check = cfg.build_model()
        del model_check
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_MODEL
    try:
        writer = ArtifactWriter(cfg.output_dir if args.out or args.config else None,
                                cfg)
    except SystemExit as exc:
        print(exc, file=sys.stderr)
        return EXIT_UNWRITABLE
    try:
        return _COMMANDS[args.command](args, cfg, writer)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
