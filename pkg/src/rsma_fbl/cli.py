"""Command-line front end: bound comparison, allocation optimization,
figure-style sweeps and a quick self-test.

All outputs are deterministic given (config, seed). CSV files use a comma
separator, dot decimals, a header row and LF line endings.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import bounds, channel_model as cm, monte_carlo as mc, optimizer as opt
from . import special_functions as sf
from .exceptions import BudgetExceededError, ConfigError

SWEEP_AXES = ("tx_power_dBm", "velocity_kmh", "blocklength", "global_t")


@dataclass
class SweepSpec:
    axis: str
    values: list
    schemes: list  # of SchemeSpec
    trials: int = 10_000
    seed: int = 12345
    output_path: str = "sweep.csv"

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"axis must be one of {SWEEP_AXES}")
        if not self.values:
            raise ConfigError("sweep values must be nonempty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        self.schemes = [
            s if isinstance(s, mc.SchemeSpec)
            else mc.SchemeSpec(s) if isinstance(s, str)
            else mc.SchemeSpec(**s)
            for s in self.schemes
        ]
        if not self.schemes:
            raise ConfigError("at least one scheme is required")

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {"axis", "values", "schemes", "trials", "seed", "output_path"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
        return cls(**data)


def _load_config(path, seed=None):
    if path is None:
        config = cm.default_config()
    else:
        try:
            with open(path) as fh:
                config = cm.SystemConfig.from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: line {exc.lineno}, "
                              f"column {exc.colno}: {exc.msg}") from exc
    if seed is not None:
        config = config.replace(rng_seed=seed)
    placed = cm.place_users(config)
    return placed, placed is not config


def _fmt(x):
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def _write_csv(path, header, rows):
    out = open(path, "w", newline="") if path else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    finally:
        if path:
            out.close()


def cmd_bound(config_path, t_grid, trials=10_000, seed=None, out=None):
    config, placed = _load_config(config_path, seed)
    if len(t_grid) == 0:
        raise ConfigError("the t grid must be nonempty")
    derived = cm.derive_link(config)
    mu = np.full(config.num_users, 1.0 / config.num_users)
    rows = []
    for t in t_grid:
        cf = bounds.bound_sum_rate(float(t), mu, config, derived)
        alloc = opt.PowerAllocation(float(t), mu, np.zeros(config.num_users))
        saa = mc.saa_rates(alloc, config, derived, trials, config.rng_seed).sum_rate
        rows.append((float(t), cf, saa, saa - cf))
    if placed:
        print(f"# placed users at distances_m={config.distances_m}", file=sys.stderr)
    _write_csv(out, ["t", "closed_form_sum", "saa_sum", "gap"], rows)
    return rows


def cmd_optimize(config_path, trials=10_000, seed=None, out=None):
    config, placed = _load_config(config_path, seed)
    derived = cm.derive_link(config)
    settings = opt.OptimizerSettings(saa_trials_for_split=trials)
    report = opt.single_step_update(config, derived, settings)
    payload = report.to_dict()
    payload["config"] = config.to_dict()
    if placed:
        payload["placed_distances_m"] = list(config.distances_m)
    text = json.dumps(payload, sort_keys=True, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    print(text)

    alloc = report.allocation
    print(f"branch: {report.branch}", file=sys.stderr)
    if alloc is not None:
        print(f"t* = {alloc.t:.6f}", file=sys.stderr)
        print("mu =", " ".join(f"{m:.6f}" for m in alloc.mu), file=sys.stderr)
        print("c  =", " ".join(f"{c:.6f}" for c in alloc.c), file=sys.stderr)
    print(f"iterations: P1={report.iterations_p1}, "
          f"P2/P4={report.iterations_p2_or_p4}", file=sys.stderr)
    if not report.qos_feasible:
        violated = payload.get("violated_users", [])
        print(f"QoS infeasible for users {violated}", file=sys.stderr)
        return 1
    return 0


def _apply_axis(config, axis, value):
    if axis == "tx_power_dBm":
        return config.replace(tx_power_dBm=float(value))
    if axis == "velocity_kmh":
        return config.replace(velocities_kmh=[float(value)] * config.num_users)
    if axis == "blocklength":
        n = int(value)
        return config.replace(blocklength_common=n,
                              blocklength_private=[n] * config.num_users)
    return config  # global_t fixes the allocation instead of the scenario


def _sweep_point(spec, config, derived, value, scheme):
    if spec.axis == "global_t":
        k = config.num_users
        t = float(value)
        if scheme.kind.startswith("rsma"):
            alloc = opt.PowerAllocation(t, np.full(k, 1.0 / k), np.zeros(k))
            return mc.saa_rates(alloc, config, derived, spec.trials,
                                spec.seed), alloc
    return mc.evaluate_scheme(scheme, config, derived, spec.trials, spec.seed)


def cmd_sweep(spec_path, config_path=None, out=None, svg=False):
    try:
        with open(spec_path) as fh:
            spec = SweepSpec.from_json(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read sweep spec {spec_path}: {exc}") from exc
    base, placed = _load_config(config_path, spec.seed)
    k = base.num_users
    header = mc.estimate_csv_header(k) + ["error"]
    rows = []
    for value in spec.values:
        config = _apply_axis(base, spec.axis, value)
        derived = cm.derive_link(config)
        for scheme in spec.schemes:
            try:
                est, alloc = _sweep_point(spec, config, derived, value, scheme)
            except BudgetExceededError as exc:
                rows.append([scheme.kind, config.tx_power_dBm,
                             config.velocities_kmh[0], float(derived.epsilon[0]),
                             "", "", "", ""] + [""] * k
                            + [spec.trials, spec.seed, f"budget_exceeded: {exc}"])
                continue
            row = mc.estimate_csv_row(scheme.kind, config, derived, alloc,
                                      est, spec.seed)
            if spec.axis == "global_t":
                row[4] = float(value)
            rows.append(row + [""])
    path = out or spec.output_path
    if placed:
        print(f"# placed users at distances_m={base.distances_m}", file=sys.stderr)
    _write_csv(path, header, rows)
    if svg:
        _render_svg(path, header, rows, spec)
    return rows


def _render_svg(csv_path, header, rows, spec):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    axis_values = [val for val in spec.values for _ in spec.schemes]
    for scheme in spec.schemes:
        pts = [(float(v), float(r[5])) for v, r in zip(axis_values, rows)
               if r[0] == scheme.kind and r[-1] == ""]
        if pts:
            ax.plot(*zip(*pts), marker="o", label=scheme.kind)
    ax.set_xlabel(spec.axis)
    ax.set_ylabel("sum rate (bit/s/Hz)")
    ax.legend()
    fig.tight_layout()
    svg_path = (csv_path or "sweep.csv").rsplit(".", 1)[0] + ".svg"
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
    return svg_path


def _selftest_checks(expn_fn=None):
    """Yield (name, passed, detail) for each self-test check."""
    expn = expn_fn or sf.exp_integral_generalized

    # generalized exponential integral recurrence
    worst = 0.0
    for v in range(1, 6):
        for x in (0.3, 1.0, 4.0):
            lhs = expn(v + 1, x)
            rhs = (math.exp(-x) - x * expn(v, x)) / v
            worst = max(worst, abs(lhs - rhs))
    yield ("exp-integral recurrence", worst < 1e-10,
           f"max residual {worst:.3e}, tolerance 1e-10")

    # Q round trip
    worst = max(abs(sf.gauss_q(sf.gauss_q_inv(b)) - b) / b
                for b in (1e-6, 1e-3, 0.1, 0.4))
    yield ("gaussian tail round-trip", worst < 1e-8,
           f"max relative error {worst:.3e}, tolerance 1e-8")

    # moment matching identities
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        d = rng.uniform(0.5, 5.0, 4)
        th = rng.uniform(0.1, 3.0, 4)
        g = bounds.gamma_moment_match(
            [bounds.GammaParams(di, ti) for di, ti in zip(d, th)])
        worst = max(worst,
                    abs(g.shape * g.scale - np.sum(d * th)) / np.sum(d * th),
                    abs(g.shape * g.scale**2 - np.sum(d * th**2)) / np.sum(d * th**2))
    yield ("gamma moment identities", worst < 1e-12,
           f"max relative residual {worst:.3e}, tolerance 1e-12")

    # water-filling vs brute force
    rng = np.random.default_rng(11)
    ok = True
    for _ in range(10):
        r_c = float(rng.uniform(0.2, 2.0))
        rp = rng.uniform(0.0, 2.0, 3)
        c = opt.waterfill_common_rate(r_c, rp)
        best = -np.inf
        grid = np.arange(0.0, 1.0 + 1e-12, 0.05)
        for a in grid:
            for b in grid:
                if a + b > 1.0 + 1e-12:
                    continue
                split = np.array([a, b, 1.0 - a - b]) * r_c
                best = max(best, float(np.min(split + rp)))
        if float(np.min(c + rp)) < best - 1e-9:
            ok = False
    yield ("water-filling optimality", ok, "min-rate vs 0.05-grid brute force")

    # reduced bound-vs-SAA gap
    config = cm.default_config(
        distances_m=[cm.distance_for_gain(1000.0, cm.default_config())] * 4
    )
    derived = cm.derive_link(config)
    mu = np.full(4, 0.25)
    worst = -np.inf
    for t in (0.3, 0.5, 0.7):
        cf = bounds.bound_sum_rate(t, mu, config, derived)
        alloc = opt.PowerAllocation(t, mu, np.zeros(4))
        saa = mc.saa_rates(alloc, config, derived, 1000, config.rng_seed).sum_rate
        worst = max(worst, (cf - saa) / max(saa, 1e-12))
    yield ("closed form vs sample average", worst < 0.05,
           f"max relative excess {worst:.3e}, slack 5%")


def cmd_selftest(expn_fn=None):
    failures = 0
    for name, passed, detail in _selftest_checks(expn_fn):
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        failures += 0 if passed else 1
    print(f"{'self-test passed' if failures == 0 else f'{failures} check(s) failed'}")
    return 0 if failures == 0 else 1


def _parse_t_grid(text):
    parts = [p for p in text.replace(",", " ").split() if p]
    return [float(p) for p in parts]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rsma-fbl",
        description="Finite-blocklength rate-splitting bounds, optimization "
                    "and Monte Carlo sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_bound = sub.add_parser("bound", help="closed-form vs sample-average sum rate")
    p_bound.add_argument("--config", default=None)
    p_bound.add_argument("--seed", type=int, default=None)
    p_bound.add_argument("--trials", type=int, default=10_000)
    p_bound.add_argument("--out", default=None)
    p_bound.add_argument("--t-grid", default="",
                         help="comma- or space-separated t values")

    p_opt = sub.add_parser("optimize", help="run the power-allocation pipeline")
    p_opt.add_argument("--config", default=None)
    p_opt.add_argument("--seed", type=int, default=None)
    p_opt.add_argument("--trials", type=int, default=10_000)
    p_opt.add_argument("--out", default=None)

    p_sweep = sub.add_parser("sweep", help="evaluate schemes along an axis")
    p_sweep.add_argument("spec", help="sweep specification JSON")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--svg", action="store_true")

    sub.add_parser("selftest", help="run built-in numerical checks")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bound":
            grid = _parse_t_grid(args.t_grid)
            if not grid:
                parser.error("bound requires a nonempty --t-grid")
            cmd_bound(args.config, grid, trials=args.trials,
                      seed=args.seed, out=args.out)
            return 0
        if args.command == "optimize":
            return cmd_optimize(args.config, trials=args.trials,
                                seed=args.seed, out=args.out)
        if args.command == "sweep":
            cmd_sweep(args.spec, config_path=args.config,
                      out=args.out, svg=args.svg)
            return 0
        if args.command == "selftest":
            return cmd_selftest()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BudgetExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
