"""Parameter sweeps, figure definitions, CSV output and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from holoidet import kernels
from holoidet.errors import InfeasibleError, InvalidArgumentError
from holoidet.harness import protocol
from holoidet.harness.scenario import Scenario, trial_seed

AXES = {
    "p_tx_dbm": "p_tx_dbm",
    "r0": "r0",
    "sense_spacing": "sense_spacing",
    "rician_k_db": "rician_k_db",
    "m": None,  # sets mx = my
    "n_feeds": "n_feeds",
    "rmse_injection": "rmse_injection",
}
# axes that only touch the downlink stage, so earlier stages are shared
DOWNLINK_AXES = {"r0"}
Z95 = 1.959963984540054


def apply_axis(sc: Scenario, axis: str, value) -> Scenario:
    if axis not in AXES:
        raise InvalidArgumentError(f"unknown sweep axis {axis!r}; choose from {', '.join(AXES)}")
    if axis == "m":
        return sc.replace(mx=int(value), my=int(value))
    if axis == "n_feeds":
        return sc.replace(n_feeds=int(value))
    return sc.replace(**{AXES[axis]: None if value is None else float(value)})


def mean_ci(values) -> tuple[float, float, float, float]:
    """Mean, sample std and the normal-approximation 95% interval."""
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    half = Z95 * std / np.sqrt(v.size)
    return mean, std, mean - half, mean + half


def paired_ci(a, b) -> tuple[float, float, float]:
    """Mean of ``a - b`` over matched trials and its 95% interval."""
    mean, _, lo, hi = mean_ci(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    return mean, lo, hi


def _result_row(res: protocol.ProtocolResult | None, sc: Scenario) -> dict:
    k_count = sc.n_receivers
    row = {"min_dc": 0.0, "min_dc_raw": 0.0, "min_rf": 0.0, "overhead": 1.0, "iterations": 0}
    for k in range(k_count):
        for name in ("rho", "sinr", "rate", "p_eh", "p_dc"):
            row[f"{name}_{k}"] = 0.0
    if res is None or res.metrics is None:
        if res is not None:
            row["overhead"] = res.overhead
        return row
    m = res.metrics
    row.update(min_dc=res.min_dc, min_dc_raw=res.min_dc_raw, min_rf=m.min_rf, overhead=res.overhead,
               iterations=res.idet.iterations)
    for k in range(k_count):
        row[f"rho_{k}"] = float(res.idet.state.rho[k])
        row[f"sinr_{k}"] = float(m.sinr[k])
        row[f"rate_{k}"] = float(m.rate[k])
        row[f"p_eh_{k}"] = float(m.p_eh[k])
        row[f"p_dc_{k}"] = float(m.p_dc[k])
    return row


def run_trials(sc: Scenario, axis: str, values, trial: int, seed: int) -> list[dict]:
    """Every axis value for one trial; downlink-only axes share the earlier stages."""
    rows = []
    shared = None
    for value in values:
        cur = apply_axis(sc, axis, value)
        base = {"scheme": cur.scheme, "axis": axis, "value": value, "trial": trial, "seed": seed}
        try:
            if axis in DOWNLINK_AXES:
                if shared is None:
                    shared = protocol.prepare(cur, seed)
                prep = shared
            else:
                prep = protocol.prepare(cur, seed)
        except InfeasibleError:
            rows.append({**base, "status": "infeasible_placement", "rmse": float("nan"), "objective": 0.0,
                         "placement_ok": False, **_result_row(None, cur)})
            continue
        res = protocol.transmit(prep, cur)
        status = "ok" if res.status == "ok" else "infeasible_rate"
        rows.append({**base, "status": status, "rmse": float(prep.sensing.errors.mean()),
                     "objective": float(prep.orientation.objective),
                     "placement_ok": bool(prep.orientation.feasibility.ok), **_result_row(res, cur)})
    return rows


def sensing_rows(sc: Scenario, axis: str, values, trial: int, seed: int) -> list[dict]:
    """Stage I only: sensing error per receiver."""
    rows = []
    for value in values:
        cur = apply_axis(sc, axis, value)
        hw = protocol.hardware(cur)
        channel = protocol.draw_channel(protocol.channel_config(cur),
                                        np.random.SeedSequence([seed, protocol.STREAM_CHANNEL]))
        out = protocol.stage_sensing(cur, hw, channel, seed)
        for k, err in enumerate(out.errors):
            rows.append({"scheme": cur.scheme, "axis": axis, "value": value, "trial": trial, "seed": seed,
                         "receiver": k, "rmse": float(err)})
    return rows


def sweep(sc: Scenario, axis: str, values, schemes, trials: int | None = None, master_seed: int | None = None,
          variants: dict[str, dict] | None = None, sensing_only: bool = False) -> list[dict]:
    """Cartesian run over variant x scheme x trial x axis value; one row per run."""
    trials = sc.trials if trials is None else trials
    master_seed = sc.seed if master_seed is None else master_seed
    variants = {"default": {}} if variants is None else variants
    rows = []
    for label, overrides in variants.items():
        for scheme in schemes:
            cur = sc.replace(scheme=scheme, **overrides)
            for t in range(trials):
                seed = trial_seed(master_seed, t)
                make = sensing_rows if sensing_only else run_trials
                for row in make(cur, axis, values, t, seed):
                    rows.append({"variant": label, **row})
    return rows


def aggregate(rows: list[dict], metric: str = "min_dc") -> list[dict]:
    """Mean, std and 95% interval of ``metric`` per (variant, scheme, axis value)."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r["variant"], r["scheme"], r["axis"], _key(r["value"])), []).append(r[metric])
    out = []
    for (variant, scheme, axis, value), vals in groups.items():
        mean, std, lo, hi = mean_ci(vals)
        out.append({"variant": variant, "scheme": scheme, "axis": axis, "value": value, "metric": metric,
                    "n": len(vals), "mean": mean, "std": std, "ci_low": lo, "ci_high": hi})
    return out


def _key(value):
    return "none" if value is None else value


@dataclass(frozen=True)
class Figure:
    name: str
    axis: str
    values: tuple
    schemes: tuple
    variants: dict = field(default_factory=lambda: {"default": {}})
    overrides: dict = field(default_factory=dict)
    sensing_only: bool = False
    metrics: tuple = ("min_dc",)


def figures(sc: Scenario) -> dict[str, Figure]:
    lam = sc.wavelength
    return {
        "4": Figure("fig4", "p_tx_dbm", (30.0, 35.0, 40.0, 45.0),
                    ("proposed", "rotation_only", "translation_only", "fpa"), metrics=("min_dc", "min_rf")),
        "5": Figure("fig5", "r0", (0.0, 2.0, 4.0, 6.0), ("proposed",),
                    {"rmse_0": {"rmse_injection": 0.0}, "rmse_0.1": {"rmse_injection": 0.1},
                     "rmse_0.17": {"rmse_injection": 0.17}}, metrics=("min_dc", "min_rf")),
        "6": Figure("fig6", "r0", (0.0, 2.0, 4.0, 6.0), ("proposed", "ls_sensing"),
                    {"ds_quarter": {"sense_spacing": lam / 4}, "ds_half": {"sense_spacing": lam / 2},
                     "ds_one": {"sense_spacing": lam}}, metrics=("min_dc", "min_rf")),
        "7": Figure("fig7", "sense_spacing", (lam / 4, lam / 2, lam), ("proposed", "ls_sensing"),
                    sensing_only=True, metrics=("rmse",)),
        "8": Figure("fig8", "p_tx_dbm", (30.0, 35.0, 40.0, 45.0), ("proposed",),
                    {"maxgain_optfeed": {}, "normal_optfeed": {"align_mode": "normal"},
                     "maxgain_center": {"feed_mode": "center"},
                     "normal_center": {"align_mode": "normal", "feed_mode": "center"}},
                    metrics=("min_dc", "min_rf")),
        "9": Figure("fig9", "m", (8, 12, 16), ("proposed",),
                    {"q1": {"n_feeds": 1}, "q2": {"n_feeds": 2}, "q4": {"n_feeds": 4}}, metrics=("min_dc", "min_rf")),
        "10": Figure("fig10", "rician_k_db", (-4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0),
                     ("proposed", "perfect_csi", "los_only"), overrides={"apply_overhead": True},
                     metrics=("min_dc", "min_rf")),
    }


def write_csv(rows: list[dict], path: Path) -> None:
    if not rows:
        raise InvalidArgumentError("nothing to write")
    columns = list(rows[0])
    for r in rows[1:]:
        for c in r:
            if c not in columns:
                columns.append(c)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r.get(c, "")) for c in columns])


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy
    import cvxpy

    from importlib import metadata
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "cvxpy": cvxpy.__version__, "holoidet": own}


def run_figure(fig_id: str, sc: Scenario, out_dir, trials: int | None = None,
               master_seed: int | None = None) -> dict:
    """Run one figure's sweep, write its CSVs and manifest, and return the manifest."""
    figs = figures(sc)
    if str(fig_id) not in figs:
        raise InvalidArgumentError(f"unknown figure {fig_id!r}; choose from {', '.join(figs)}")
    fig = figs[str(fig_id)]
    trials = sc.trials if trials is None else int(trials)
    master_seed = sc.seed if master_seed is None else int(master_seed)
    base = sc.replace(**fig.overrides)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = sweep(base, fig.axis, fig.values, fig.schemes, trials, master_seed, fig.variants, fig.sensing_only)
    summary = [agg for metric in fig.metrics for agg in aggregate(rows, metric)]
    raw_path, sum_path = out_dir / f"{fig.name}.csv", out_dir / f"{fig.name}_summary.csv"
    write_csv(rows, raw_path)
    write_csv(summary, sum_path)

    manifest = {
        "figure": str(fig_id),
        "scenario": sc.to_dict(),
        "config_hash": sc.config_hash(),
        "master_seed": master_seed,
        "trials": trials,
        "trial_seeds": [trial_seed(master_seed, t) for t in range(trials)],
        "axis": fig.axis,
        "values": list(fig.values),
        "schemes": list(fig.schemes),
        "variants": fig.variants,
        "versions": _versions(),
        "backend": kernels.BACKEND,
        "files": {raw_path.name: sha256_file(raw_path), sum_path.name: sha256_file(sum_path)},
    }
    (out_dir / f"{fig.name}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def rerun_manifest(manifest_path, out_dir) -> tuple[dict, bool]:
    """Re-run a figure from its manifest; returns the new manifest and whether all files match."""
    old = json.loads(Path(manifest_path).read_text())
    sc = Scenario.from_dict(old["scenario"])
    if sc.config_hash() != old["config_hash"]:
        raise InvalidArgumentError("manifest scenario does not match its config hash")
    new = run_figure(old["figure"], sc, out_dir, old["trials"], old["master_seed"])
    return new, new["files"] == old["files"]
