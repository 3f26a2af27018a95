"""Command-line front end: each subcommand runs one experiment family and
writes CSV data, a JSON report, and (on request) SVG plots into the output
directory.

Configuration is a single JSON document; individual fields can be
overridden on the command line with ``--set key=value`` (dotted keys reach
into sub-objects), and ``--set`` wins over the file, which wins over the
built-in defaults.  Outputs carry no timestamps, so a command rerun with
the same config and seed reproduces its files byte for byte.

Exit codes: 0 success, 2 configuration error, 3 precondition error,
4 threshold breach.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, env, limit, network, resistance, stats, walk
from .errors import (
    ConfigError,
    DomainError,
    GridError,
    ParameterError,
    PreconditionError,
    ThresholdBreach,
)

__all__ = ["main"] + [f"cmd_{c.replace('-', '_')}" for c in (
    "gen-env", "walk-path", "resistance", "converge", "measure", "homog", "quenched", "plot")]

_FMT = ".17g"


# --- config handling --------------------------------------------------------

_COMMON_DEFAULTS = {
    "params": {},
    "seed": 20240 + 1,
    "stream_id": 0,
    "output_dir": "out",
    "jobs": 1,
}

_DEFAULTS = {
    "gen-env": {"N": 1000, "replicates": 1},
    "walk-path": {"n": 200, "K": 1, "speed": "constant", "t": 1.0, "max_steps": 3_000_000, "cutoff": None},
    "resistance": {
        "n": 500,
        "K": 2,
        "replicates": 20,
        "grid_step": 0.25,
        "a_coeff": None,
        "pairs_per_env": 4,
        "thresholds": {"sandwich_rel_tol": 1e-9, "max_violations": 0},
    },
    "converge": {
        "n": 500,
        "K_window": 4,
        "t": 1.0,
        "replicates": 1000,
        "speed": "constant",
        "cutoff": None,
        "tail_const_samples": 200_000,
        "mass_samples": 200_000,
        "limit": {"delta_u": 0.02, "replicates": 2000, "eps": None},
        "thresholds": {"ks": 0.1, "exclusion_rate": 0.01},
        "plot": False,
    },
    "measure": {
        "n": 10_000,
        "K": 1,
        "intervals": [[0.0, 1.0]],
        "oracle_samples": 200_000,
        "thresholds": {"rel_err": 0.05},
    },
    "homog": {
        "n_list": [1000, 3000, 10000],
        "resistance_envs": 8,
        "walk_n_list": [250, 500, 1000],
        "walk_replicates": 400,
        "time_exponent": 2.0,
        "K_window": 8,
        "thresholds": {"growth_spread": 0.10, "variance_spread": 0.20},
    },
    "quenched": {"n_list": [100, 200, 400], "replicates": 20, "window_factor": 2},
    "plot": {"input": None, "resistance_space": True},
}

_ALLOWED_PARAMS = {
    "rho", "beta", "lam", "kappa", "energy_law", "energy_args", "interaction", "gap_law", "gap_args",
}


def _merge(base: dict, extra: dict, context: str, allowed: set) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in allowed:
            raise ConfigError(f"unknown config field {context}{key!r}")
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "params":
            out[key] = _merge(out[key], val, context + key + ".", set(out[key]))
        else:
            out[key] = val
    return out


def _resolve_config(command: str, config_path: str | None, sets: list[str]) -> dict:
    base = copy.deepcopy(_COMMON_DEFAULTS)
    base.update(copy.deepcopy(_DEFAULTS[command]))
    allowed = set(base)
    doc = {}
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        doc.pop("experiment", None)
    cfg = _merge(base, doc, "", allowed)
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        target = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in target or not isinstance(target[p], dict):
                raise ConfigError(f"unknown config field {key!r}")
            target = target[p]
        leaf = parts[-1]
        if leaf not in target and not (len(parts) == 2 and parts[0] == "params"):
            raise ConfigError(f"unknown config field {key!r}")
        target[leaf] = val
    bad = set(cfg["params"]) - _ALLOWED_PARAMS
    if bad:
        raise ConfigError(f"unknown model parameter(s): {sorted(bad)}")
    try:
        cfg["_params"] = env.ModelParams.from_dict({"energy_args": (0.0, 1.0), **cfg["params"]})
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    cfg["_stream"] = env.RngStream(seed=int(cfg["seed"]), stream_id=int(cfg["stream_id"]))
    return cfg


def _outdir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(out: Path, name: str, payload: dict) -> Path:
    path = out / name
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, default=_json_default)
        fh.write("\n")
    return path


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _sidecar(cfg: dict, extra: dict | None = None) -> dict:
    doc = {k: v for k, v in cfg.items() if not k.startswith("_")}
    doc["version"] = __version__
    if extra:
        doc.update(extra)
    return doc


def _save_svg(fig, path: Path) -> None:
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "mottlab"
    fig.savefig(path, format="svg", metadata={"Date": None})


# --- commands ----------------------------------------------------------------


def cmd_gen_env(cfg) -> dict:
    out = _outdir(cfg)
    files = []
    for r in range(int(cfg["replicates"])):
        e = env.generate_environment(cfg["_params"], int(cfg["N"]), cfg["_stream"].child(r))
        path = out / f"env_{cfg['stream_id']}_{r}.json"
        env.save_environment(e, path)
        files.append(str(path))
    report = {"command": "gen-env", "files": files, "config": _sidecar(cfg)}
    _write_report(out, "gen_env_report.json", report)
    return report


def cmd_walk_path(cfg) -> dict:
    out = _outdir(cfg)
    p = cfg["_params"]
    n, K = int(cfg["n"]), int(cfg["K"])
    need = network.recommended_window(p, K, n)
    e = env.generate_environment(p, need, cfg["_stream"].child(0))
    env_path = out / "walk_env.json"
    env.save_environment(e, env_path)
    net = network.build_truncated_network(e, K, n, cutoff=cfg["cutoff"])
    chain = walk.chain_from_network(net, cfg["speed"])
    horizon = float(cfg["t"]) * walk.walk_time_scale(p, n, cfg["speed"])
    traj = walk.simulate(
        chain,
        start=net.row(0),
        stream=cfg["_stream"].child(1),
        t_max=horizon,
        max_steps=int(cfg["max_steps"]),
        record="path",
    )
    csv_path = out / "trajectory.csv"
    with open(csv_path, "w") as fh:
        fh.write("t,index,position\n")
        for t, s_row, x in zip(traj.times, traj.sites, traj.positions):
            fh.write(f"{format(t, _FMT)},{net.index(int(s_row))},{format(x, _FMT)}\n")
    meta = _sidecar(cfg, {"env_file": str(env_path), "reason": traj.reason, "steps": traj.steps})
    _write_report(out, "trajectory.csv.json", meta)
    return {"command": "walk-path", "trajectory": str(csv_path), "steps": traj.steps, "reason": traj.reason}


def cmd_resistance(cfg) -> dict:
    out = _outdir(cfg)
    p = cfg["_params"]
    n, K = int(cfg["n"]), int(cfg["K"])
    reps = int(cfg["replicates"])
    rel_tol = float(cfg["thresholds"]["sandwich_rel_tol"])
    a_coeff = cfg["a_coeff"]
    pairs_per_env = int(cfg["pairs_per_env"])
    need = network.recommended_window(p, K, n) + int(math.floor(n**0.25)) + 4
    rows = []
    violations = 0
    events = {"upper": 0, "lower": 0, "both": 0}
    profile_rows = []
    for r in range(reps):
        st = cfg["_stream"].child(r)
        e = env.generate_environment(p, need, st.child(0))
        bundle = resistance.correction_bundle(e, K, n, a_coeff)
        net = network.build_truncated_network(e, K, n, cutoff=2 * K * n)
        prof = resistance.resistance_profile(net, float(cfg["grid_step"]))
        for u, v in zip(prof.grid, prof.values):
            profile_rows.append((r, u, v))
        events["upper"] += bundle.event_upper
        events["lower"] += bundle.event_lower
        both = bundle.event_upper and bundle.event_lower
        events["both"] += both
        rng = st.child(1).generator()
        Kn = K * n
        pairs = []
        for _ in range(pairs_per_env):
            i, j = sorted(rng.integers(-Kn, Kn + 1, size=2))
            if i < j:
                pairs.append((int(i), int(j)))
        if both:
            for i, j in pairs:
                upper = resistance.resistance_upper_bound(bundle, i, j)
                lower = resistance.sandwich_lower(bundle, i, j)
                exact = resistance.effective_resistance(net, {i}, {j})
                hi_ok = exact <= upper * (1 + rel_tol)
                lo_ok = lower <= exact * (1 + rel_tol)
                if not (hi_ok and lo_ok):
                    violations += 1
                rows.append((r, i, j, exact, lower, upper, int(hi_ok and lo_ok)))
    with open(out / "profiles.csv", "w") as fh:
        fh.write("replicate,u,value\n")
        for r, u, v in profile_rows:
            fh.write(f"{r},{format(u, _FMT)},{format(v, _FMT)}\n")
    with open(out / "sandwich.csv", "w") as fh:
        fh.write("replicate,i,j,exact,lower,upper,ok\n")
        for row in rows:
            fh.write(",".join(format(x, _FMT) if isinstance(x, float) else str(x) for x in row) + "\n")
    report = {
        "command": "resistance",
        "replicates": reps,
        "event_frequency": {k: v / reps for k, v in events.items()},
        "pairs_checked": len(rows),
        "violations": violations,
        "config": _sidecar(cfg),
    }
    _write_report(out, "resistance_report.json", report)
    if violations > int(cfg["thresholds"]["max_violations"]):
        raise ThresholdBreach(f"{violations} sandwich violations")
    return report


def cmd_converge(cfg) -> dict:
    out = _outdir(cfg)
    p = cfg["_params"]
    n = int(cfg["n"])
    t = float(cfg["t"])
    speed = cfg["speed"]
    stream = cfg["_stream"]
    if speed == "trap" and p.kappa is None:
        raise ConfigError("trap mode needs params.kappa")

    tail = resistance.estimate_tail_constant(p, int(cfg["tail_const_samples"]), stream.child(10_001))
    if speed == "trap":
        mass = network.estimate_site_mass_moment(p, int(cfg["mass_samples"]), stream.child(10_002), power=p.kappa)
    else:
        mass = network.estimate_site_mass_moment(p, int(cfg["mass_samples"]), stream.child(10_002))

    marg = walk.marginal_samples(
        p,
        n,
        t,
        int(cfg["replicates"]),
        stream.child(1),
        speed=speed,
        K_window=int(cfg["K_window"]),
        cutoff=cfg["cutoff"],
        jobs=int(cfg["jobs"]),
    )
    exclusion_rate = marg.excluded / marg.replicates

    lim_cfg = cfg["limit"]
    builder = limit.limit_chain_builder(
        tail_const=tail["estimate"],
        rho=p.rho,
        lam=p.lam,
        K=float(cfg["K_window"]),
        delta_u=float(lim_cfg["delta_u"]),
        mass_const=mass["estimate"],
        eps=lim_cfg["eps"],
        kappa=p.kappa if speed == "trap" else None,
        trap_mass_const=mass["estimate"] if speed == "trap" else None,
    )
    zs = limit.simulate_limit_process(builder, [t], int(lim_cfg["replicates"]), stream.child(2))[t]
    ks = stats.ks_two_sample(marg.sample, zs)
    stats.save_sample(marg.sample, out / "walk_sample.csv")
    stats.save_sample(zs, out / "limit_sample.csv")
    report = {
        "command": "converge",
        "ks_statistic": ks.statistic,
        "ks_pvalue": ks.pvalue,
        "tail_constant": tail,
        "mass_constant": mass,
        "exclusion_rate": exclusion_rate,
        "walk_sample_size": len(marg.sample),
        "limit_sample_size": len(zs),
        "config": _sidecar(cfg),
    }
    _write_report(out, "converge_report.json", report)
    if cfg.get("plot"):
        from matplotlib import pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        for sample, label in ((marg.sample, "walk"), (zs, "limit")):
            xs = np.sort(sample.values)
            ax.step(xs, np.arange(1, len(xs) + 1) / len(xs), where="post", label=label)
        ax.set_xlabel("rescaled position")
        ax.set_ylabel("empirical CDF")
        ax.legend()
        fig.tight_layout()
        _save_svg(fig, out / "converge_cdf.svg")
        plt.close(fig)
    if ks.statistic >= float(cfg["thresholds"]["ks"]):
        raise ThresholdBreach(f"KS {ks.statistic:.4f} >= {cfg['thresholds']['ks']}")
    if exclusion_rate >= float(cfg["thresholds"]["exclusion_rate"]):
        raise ThresholdBreach(f"boundary exclusion rate {exclusion_rate:.4f} too high")
    return report


def cmd_measure(cfg) -> dict:
    out = _outdir(cfg)
    p = cfg["_params"]
    n, K = int(cfg["n"]), int(cfg["K"])
    stream = cfg["_stream"]
    oracle = network.estimate_site_mass_moment(p, int(cfg["oracle_samples"]), stream.child(10_001))
    e = env.generate_environment(p, network.recommended_window(p, K, n), stream.child(0))
    net = network.build_truncated_network(e, K, n)
    rows = []
    worst = 0.0
    for a, b in cfg["intervals"]:
        rep = network.measure_interval(net, float(a), float(b))
        if p.lam == 0.0:
            integral = b - a
        else:
            c = 2.0 * p.lam / p.rho
            integral = (math.exp(c * b) - math.exp(c * a)) / c
        target = oracle["estimate"] * integral
        rel = abs(rep.normalized_mass / target - 1.0)
        worst = max(worst, rel)
        rows.append((a, b, rep.raw_mass, rep.normalized_mass, target, rel))
    with open(out / "measure_table.csv", "w") as fh:
        fh.write("a,b,raw_mass,normalized_mass,limit_value,rel_err\n")
        for row in rows:
            fh.write(",".join(format(float(x), _FMT) for x in row) + "\n")
    report = {
        "command": "measure",
        "oracle": oracle,
        "worst_rel_err": worst,
        "rows": len(rows),
        "config": _sidecar(cfg),
    }
    _write_report(out, "measure_report.json", report)
    if worst > float(cfg["thresholds"]["rel_err"]):
        raise ThresholdBreach(f"measure error {worst:.4f} over threshold")
    return report


def cmd_homog(cfg) -> dict:
    out = _outdir(cfg)
    p = cfg["_params"]
    stream = cfg["_stream"]
    n_list = [int(x) for x in cfg["n_list"]]
    n_max = max(n_list)
    growth = {n: [] for n in n_list}
    for r in range(int(cfg["resistance_envs"])):
        e = env.generate_environment(p, 2 * n_max + 200, stream.child(r))
        net = network.build_truncated_network(e, 2, n_max, bias_scale=network.UNSCALED)
        vals = resistance.resistance_from_origin(net, n_list)
        for n, v in zip(n_list, vals):
            growth[n].append(v / n)
    med = {n: float(np.median(v)) for n, v in growth.items()}
    center = float(np.median(list(med.values())))
    spread = max(abs(v - center) for v in med.values()) / center

    walk_ns = [int(x) for x in cfg["walk_n_list"]]
    samples = []
    for n in walk_ns:
        m = walk.marginal_samples(
            p,
            n,
            1.0,
            int(cfg["walk_replicates"]),
            stream.child(1000 + n),
            K_window=int(cfg["K_window"]),
            time_exponent=float(cfg["time_exponent"]),
            jobs=int(cfg["jobs"]),
        )
        samples.append((n, m.sample_physical))
    fit = stats.variance_scaling_fit(samples)
    variances = dict(zip(fit.sizes, fit.variances))
    report = {
        "command": "homog",
        "growth_per_site": med,
        "growth_spread": spread,
        "variance_fit_exponent": fit.exponent,
        "variances": variances,
        "config": _sidecar(cfg),
    }
    with open(out / "homog_growth.csv", "w") as fh:
        fh.write("n,median_resistance_per_site\n")
        for n in n_list:
            fh.write(f"{n},{format(med[n], _FMT)}\n")
    _write_report(out, "homog_report.json", report)
    flat_cap = math.log(1.0 + float(cfg["thresholds"]["variance_spread"])) / math.log(2.0)
    if spread > float(cfg["thresholds"]["growth_spread"]):
        raise ThresholdBreach(f"resistance growth spread {spread:.4f}")
    if abs(fit.exponent) > flat_cap:
        raise ThresholdBreach(f"variance exponent {fit.exponent:.4f} not flat")
    return report


def cmd_quenched(cfg) -> dict:
    out = _outdir(cfg)
    p = cfg["_params"]
    stream = cfg["_stream"]
    n_list = [int(x) for x in cfg["n_list"]]
    n_max = max(n_list)
    factor = int(cfg["window_factor"])
    e = env.generate_environment(p, network.recommended_window(p, factor, n_max), stream.child(0))
    net = network.build_truncated_network(e, factor, n_max)
    chain = walk.chain_from_network(net, "constant")
    rows = []
    for n in n_list:
        scale = walk.walk_time_scale(p, n, "constant")
        times = []
        for r in range(int(cfg["replicates"])):
            t_exit, reason = walk.exit_time(chain, n, stream.child(10 * n + r))
            if reason == "hit":
                times.append(t_exit)
        med = float(np.median(times)) if times else math.nan
        rows.append((n, med, med / scale, len(times)))
    with open(out / "quenched_table.csv", "w") as fh:
        fh.write("n,median_exit_time,rescaled_median,runs\n")
        for row in rows:
            fh.write(",".join(format(float(x), _FMT) for x in row) + "\n")
    report = {
        "command": "quenched",
        "table": [dict(zip(("n", "median_exit_time", "rescaled_median", "runs"), r)) for r in rows],
        "config": _sidecar(cfg),
    }
    _write_report(out, "quenched_report.json", report)
    return report


def cmd_plot(cfg) -> dict:
    from matplotlib import pyplot as plt

    out = _outdir(cfg)
    src = cfg["input"]
    if not src:
        raise ConfigError("plot needs input=<trajectory.csv>")
    data = np.loadtxt(src, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(Path(str(src) + ".json").read_text())
    t, idx, pos = data[:, 0], data[:, 1].astype(int), data[:, 2]
    e = env.load_environment(meta["env_file"])
    p = e.params
    n, K = int(meta["n"]), int(meta["K"])
    net = network.build_truncated_network(e, K, n, cutoff=meta.get("cutoff"))

    lo, hi = idx.min(), idx.max()
    pad = max(2, (hi - lo) // 10)
    shown = np.arange(max(lo - pad, -net.Kn), min(hi + pad, net.Kn) + 1)

    fig, ax = plt.subplots(figsize=(5, 6))
    for x in e.position(shown):
        ax.axvline(x, color="0.8", lw=0.5, zorder=0)
    ax.plot(pos, t, lw=0.7, color="tab:blue")
    ax.set_xlabel("position")
    ax.set_ylabel("time")
    fig.tight_layout()
    phys_path = out / "trajectory_physical.svg"
    _save_svg(fig, phys_path)
    plt.close(fig)

    outputs = {"physical": str(phys_path)}
    if cfg["resistance_space"]:
        coords = resistance.resistance_from_origin(net, shown)
        rmap = dict(zip(shown, np.sign(shown) * coords))
        fig, ax = plt.subplots(figsize=(5, 6))
        for x in rmap.values():
            ax.axvline(x, color="0.8", lw=0.5, zorder=0)
        ax.plot([rmap[i] for i in idx], t, lw=0.7, color="tab:red")
        ax.set_xlabel("resistance coordinate")
        ax.set_ylabel("time")
        fig.tight_layout()
        res_path = out / "trajectory_resistance.svg"
        _save_svg(fig, res_path)
        plt.close(fig)
        outputs["resistance"] = str(res_path)
    report = {"command": "plot", "outputs": outputs, "config": _sidecar(cfg)}
    _write_report(out, "plot_report.json", report)
    return report


_COMMANDS = {
    "gen-env": cmd_gen_env,
    "walk-path": cmd_walk_path,
    "resistance": cmd_resistance,
    "converge": cmd_converge,
    "measure": cmd_measure,
    "homog": cmd_homog,
    "quenched": cmd_quenched,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mottlab",
        description="hopping-model simulation experiments (config file < --set overrides)",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="JSON config document")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    parser.add_argument("--output-dir", help="shorthand for --set output_dir=...")
    args = parser.parse_args(argv)
    sets = list(args.set)
    if args.output_dir:
        sets.append(f"output_dir={args.output_dir}")
    try:
        cfg = _resolve_config(args.command, args.config, sets)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = _COMMANDS[args.command](cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PreconditionError, GridError, DomainError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return 3
    except ThresholdBreach as exc:
        print(f"threshold breach: {exc}", file=sys.stderr)
        return 4
    summary = {k: v for k, v in report.items() if k not in ("config",)}
    print(json.dumps(summary, sort_keys=True, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
