"""Command-line interface: ``sievecov <command> [options]``.

Commands
--------
simulate     draw replicated Gaussian-process data at random sites
approximate  smallest sieve order approximating a parametric correlation
fit          sieve maximum-likelihood fit of a site CSV
evaluate     score a fitted model against a simulation setting
mc-study     Monte Carlo comparison of estimators on a setting
ingest       station-by-year panel -> complete-case, detrended site CSV

Every command takes ``--config FILE`` (JSON) whose keys override the
defaults shown by ``--print-config``; explicit flags override the file.
Outputs are a pure function of inputs, configuration and seed, and each
carries a run manifest (a ``#`` comment line in CSV files, a ``manifest``
key in JSON files).

Exit codes: 0 success, 2 invalid input, 3 convergence warning (outputs are
still written), 4 conditioning failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .approx import select_min_m
from .basis import SieveCovariance
from .empirical import detrend_two_way_anova
from .evaluation import METRICS, available_methods, compute_metrics, mc_study, setting_truth
from .exceptions import ConditioningError, ConvergenceError, DomainError, ValidationError
from .gp import SpatialDataset, simulate_gp
from .parametric import FAMILIES, ParametricCovariance
from .sieve_mle import FitConfig, fit_auto_m, fit_given_m

__all__ = ["main", "read_site_csv", "write_site_csv", "read_panel_csv", "project_equirectangular"]

log = logging.getLogger("sievecov")

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_CONDITIONING = 0, 2, 3, 4
EARTH_RADIUS_KM = 6371.0088
PROJECTION = "equirectangular about the station centroid, R=6371.0088 km"

DEFAULTS = {
    "simulate": {
        "setting": None, "family": "Matern", "params": [1.0, 1.25, 1.0], "nugget": 0.0,
        "n_sites": 60, "domain": 20.0, "r": 50, "seed": 0, "out": "simulated.csv",
    },
    "approximate": {
        "family": "Matern", "params": [1.0, 1.0, 1.0], "threshold": 0.05, "m_max": 30,
        "curve_points": 201, "curve_h_max": 10.0, "out_dir": "approx_out",
    },
    "fit": {
        "data": None, "m": None, "nugget": False, "detrend": False, "seed": 0,
        "rel_tol": 1e-3, "m_stop_rel_gain": 1e-3, "curve_points": 201, "out_dir": "fit_out",
    },
    "evaluate": {"model": None, "setting": 1, "K": 2000, "out": "metrics.json"},
    "mc-study": {
        "setting": 1, "n_sites": 60, "domain": 20.0, "r": 50, "n_mc": 10,
        "methods": ["sieve_mle", "mle_Matern", "wls_cov_Matern", "wls_gamma_Matern"],
        "seed": 0, "threads": 1, "full_scale": False, "out_dir": "study_out",
    },
    "ingest": {"panel": None, "detrend": True, "out_dir": "ingest_out"},
}

FULL_SCALE = {"r": 200, "n_mc": 100}
_LOCATION_KEYS = {"out", "out_dir", "data", "model", "panel"}


def tool_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
        from . import __version__

        return __version__


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _fmt(x):
    """Shortest round-tripping text for a float."""
    return repr(float(x))


class Run:
    """Collects outputs and writes them, with manifest, at the end of a command."""

    def __init__(self, command, config, inputs=(), extra=None):
        self.command = command
        self.config = config
        self.extra = extra or {}
        # where files live is not part of what was computed: locations are left
        # out of the digest and input files enter by content
        semantic = {k: v for k, v in config.items() if k not in _LOCATION_KEYS}
        h = hashlib.sha256(_canonical(semantic).encode())
        for path in inputs:
            h.update(Path(path).read_bytes())
        self.digest = h.hexdigest()
        self._files = []

    def add_json(self, path, payload):
        self._files.append((Path(path), "json", payload))

    def add_csv(self, path, header, rows):
        self._files.append((Path(path), "csv", (header, rows)))

    def manifest(self):
        return {
            "command": self.command,
            "config_digest": self.digest,
            "seed": self.config.get("seed"),
            "tool_version": tool_version(),
            "outputs": sorted(p.name for p, _, _ in self._files),
            **self.extra,
        }

    def write(self):
        man = self.manifest()
        for path, kind, payload in self._files:
            path.parent.mkdir(parents=True, exist_ok=True)
            if kind == "json":
                text = json.dumps({"manifest": man, **payload}, sort_keys=True, indent=2) + "\n"
            else:
                header, rows = payload
                buf = io.StringIO()
                buf.write("# manifest: " + _canonical(man) + "\n")
                w = csv.writer(buf, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
                text = buf.getvalue()
            path.write_text(text, encoding="utf-8")
        return [str(p) for p, _, _ in self._files]


# --- file formats ------------------------------------------------------------


def _data_lines(path):
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            yield lineno, line


def read_site_csv(path):
    """Read ``site_id,x,y,rep_1,...,rep_r`` into a :class:`SpatialDataset`.

    Malformed rows raise :class:`ValidationError` naming the line number.
    """
    lines = list(_data_lines(path))
    if not lines:
        raise ValidationError(f"{path}: empty file")
    hdr_line, hdr = lines[0]
    header = next(csv.reader([hdr]))
    if header[:3] != ["site_id", "x", "y"] or len(header) < 4:
        raise ValidationError(f"{path}:{hdr_line}: header must be site_id,x,y,rep_1,...")
    labels, coords, vals = [], [], []
    for lineno, line in lines[1:]:
        row = next(csv.reader([line]))
        if len(row) != len(header):
            raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            nums = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in nums):
            raise ValidationError(f"{path}:{lineno}: non-finite value")
        labels.append(row[0])
        coords.append(nums[:2])
        vals.append(nums[2:])
    if len(labels) < 2:
        raise ValidationError(f"{path}: need at least two sites")
    return SpatialDataset(coords=np.array(coords), obs=np.array(vals).T, labels=labels)


def write_site_csv_rows(dataset):
    r = dataset.r
    header = ["site_id", "x", "y"] + [f"rep_{j + 1}" for j in range(r)]
    labels = dataset.labels or [f"s{i + 1}" for i in range(dataset.n)]
    rows = []
    for i in range(dataset.n):
        rows.append([labels[i], float(dataset.coords[i, 0]), float(dataset.coords[i, 1])]
                    + [float(v) for v in dataset.obs[:, i]])
    return header, rows


def write_site_csv(dataset, path, command="export", config=None):
    run = Run(command, config or {})
    run.add_csv(path, *write_site_csv_rows(dataset))
    run.write()


def read_panel_csv(path):
    """Read ``station,lon,lat,year_YYYY,...``; empty cells are missing.

    Returns
    -------
    stations : list of str
    lonlat : numpy.ndarray, shape (S, 2)
    years : list of str
    values : numpy.ndarray, shape (S, T), NaN where missing
    """
    lines = list(_data_lines(path))
    if not lines:
        raise ValidationError(f"{path}: empty file")
    hdr_line, hdr = lines[0]
    header = next(csv.reader([hdr]))
    if header[:3] != ["station", "lon", "lat"] or len(header) < 4 or not all(
        h.startswith("year_") for h in header[3:]
    ):
        raise ValidationError(f"{path}:{hdr_line}: header must be station,lon,lat,year_YYYY,...")
    stations, lonlat, values = [], [], []
    for lineno, line in lines[1:]:
        row = next(csv.reader([line]))
        if len(row) != len(header):
            raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            lon, lat = float(row[1]), float(row[2])
            vals = [float(v) if v.strip() else float("nan") for v in row[3:]]
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        if not (-180.0 <= lon <= 360.0 and -90.0 <= lat <= 90.0):
            raise ValidationError(f"{path}:{lineno}: longitude/latitude out of range")
        stations.append(row[0])
        lonlat.append((lon, lat))
        values.append(vals)
    return stations, np.array(lonlat, dtype=float), [h[5:] for h in header[3:]], np.array(values, dtype=float)


def project_equirectangular(lonlat, center=None):
    """Kilometre coordinates by an equirectangular projection about ``center``.

    ``center`` defaults to the mean longitude/latitude of the points.
    """
    lonlat = np.asarray(lonlat, dtype=float)
    lon0, lat0 = lonlat.mean(axis=0) if center is None else center
    x = EARTH_RADIUS_KM * np.radians(lonlat[:, 0] - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_KM * np.radians(lonlat[:, 1] - lat0)
    return np.column_stack([x, y])


# --- commands ----------------------------------------------------------------


def _model_from_config(cfg):
    if cfg.get("setting") is not None:
        model, _ = setting_truth(int(cfg["setting"]))
        return ParametricCovariance(model.family, model.params, float(cfg.get("nugget", 0.0)))
    if cfg["family"] not in FAMILIES:
        raise DomainError(f"unknown family {cfg['family']!r}; choose from {sorted(FAMILIES)}")
    return ParametricCovariance(cfg["family"], tuple(float(p) for p in cfg["params"]), float(cfg.get("nugget", 0.0)))


def cmd_simulate(cfg):
    model = _model_from_config(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg["seed"])))
    coords = rng.uniform(0.0, float(cfg["domain"]), size=(int(cfg["n_sites"]), 2))
    data = simulate_gp(model, coords, int(cfg["r"]), rng)
    run = Run("simulate", cfg)
    run.add_csv(cfg["out"], *write_site_csv_rows(data))
    return run, EXIT_OK


def cmd_approximate(cfg):
    model = _model_from_config(cfg)
    threshold = float(cfg["threshold"])
    if not threshold > 0:
        raise DomainError("threshold must be positive")
    res = select_min_m(model.correlation, threshold=threshold, m_grid=range(1, int(cfg["m_max"]) + 1))
    out = Path(cfg["out_dir"])
    record = res.to_dict()
    record["selected_m"] = res.m
    record["target"] = model.to_dict()
    record["threshold"] = threshold
    record["history"] = [[int(m), float(e)] for m, e in (res.history or [])]
    sieve = SieveCovariance(res.weights)
    h = np.linspace(0.0, float(cfg["curve_h_max"]), int(cfg["curve_points"]))
    rows = [[float(a), float(b), float(c)] for a, b, c in zip(h, model.correlation(h), sieve(h))]
    run = Run("approximate", cfg)
    run.add_json(out / "result.json", record)
    run.add_csv(out / "curve.csv", ["h", "target", "approximation"], rows)
    return run, EXIT_OK if res.met_threshold else EXIT_CONVERGENCE


def cmd_fit(cfg):
    if not cfg.get("data"):
        raise ValidationError("fit needs a data file (--data)")
    data = read_site_csv(cfg["data"])
    effects = None
    if cfg["detrend"]:
        resid, effects = detrend_two_way_anova(data.obs.T)
        data = SpatialDataset(coords=data.coords, obs=resid.T, labels=data.labels)
    fc = FitConfig(rel_tol=float(cfg["rel_tol"]), m_stop_rel_gain=float(cfg["m_stop_rel_gain"]),
                   include_nugget=bool(cfg["nugget"]), seed=int(cfg["seed"]))
    if cfg.get("m") is not None:
        res = fit_given_m(data, int(cfg["m"]), fc)
    else:
        res = fit_auto_m(data, fc)
    out = Path(cfg["out_dir"])
    record = res.to_dict()
    record["kkt_residual"] = float(res.kkt_residual)
    record["n_sites"], record["n_replicates"] = data.n, data.r
    if effects is not None:
        record["grand_mean"] = effects["mu"]
    hmax = data.distance_range()[1]
    h = np.linspace(0.0, hmax, int(cfg["curve_points"]))
    corr = SieveCovariance(res.model.weights, res.model.rho)(h)
    rows = [[float(a), float(res.model.sigma2 * c), float(c)] for a, c in zip(h, corr)]
    run = Run("fit", cfg, inputs=[cfg["data"]])
    run.add_json(out / "fit.json", record)
    run.add_csv(out / "candidates.csv", ["m", "loglik_per_obs", "nugget", "c0"],
                [[int(m), float(ll) if ll is not None else "", float(nu), float(c0)]
                 for m, ll, nu, c0 in res.candidate_table()])
    run.add_csv(out / "curve.csv", ["h", "covariance", "correlation"], rows)
    return run, EXIT_OK if res.converged else EXIT_CONVERGENCE


def _load_model(path):
    with open(path, encoding="utf-8") as fh:
        rec = json.load(fh)
    rec = rec.get("model", rec)
    if "family" in rec:
        return ParametricCovariance.from_dict(rec)
    return SieveCovariance.from_dict(rec)


def cmd_evaluate(cfg):
    if not cfg.get("model"):
        raise ValidationError("evaluate needs a model file (--model)")
    model = _load_model(cfg["model"])
    truth, h_m = setting_truth(int(cfg["setting"]))
    rep = compute_metrics(truth, model, h_m, K=int(cfg["K"]))
    run = Run("evaluate", cfg, inputs=[cfg["model"]])
    run.add_json(cfg["out"], {"setting": int(cfg["setting"]), "metrics": rep.to_dict()})
    return run, EXIT_OK


def cmd_mc_study(cfg):
    if cfg["full_scale"]:
        cfg = {**cfg, **FULL_SCALE}
    for m in cfg["methods"]:
        if m not in available_methods():
            raise DomainError(f"unknown method {m!r}; choose from {available_methods()}")
    res = mc_study(int(cfg["setting"]), n_sites=int(cfg["n_sites"]), domain=float(cfg["domain"]),
                   r=int(cfg["r"]), n_mc=int(cfg["n_mc"]), methods=tuple(cfg["methods"]),
                   seed=int(cfg["seed"]), threads=int(cfg["threads"]))
    out = Path(cfg["out_dir"])
    summary = res.summary()
    rows = []
    for method, stats in summary.items():
        row = [method]
        for name in METRICS:
            mu, sd = stats[name]
            row += [f"{100 * mu:.2f}", f"{100 * sd:.2f}"]
        row += [len(res.reports[method]), res.failures[method]]
        rows.append(row)
    header = ["method"] + [f"{n}_{s}" for n in METRICS for s in ("mean", "sd")] + ["n_ok", "n_failed"]
    runs = {m: [r.to_dict() for r in reps] for m, reps in res.reports.items()}
    run = Run("mc-study", {k: v for k, v in cfg.items() if k != "threads"})
    run.add_csv(out / "table.csv", header, rows)
    run.add_json(out / "runs.json", {"setting": res.setting, "h_m": res.h_m, "units": "table in 1e-2",
                                     "runs": runs, "failures": res.failures})
    return run, EXIT_OK


def cmd_ingest(cfg):
    if not cfg.get("panel"):
        raise ValidationError("ingest needs a panel file (--panel)")
    stations, lonlat, years, values = read_panel_csv(cfg["panel"])
    complete = np.all(np.isfinite(values), axis=1)
    excluded = [s for s, ok in zip(stations, complete) if not ok]
    stations = [s for s, ok in zip(stations, complete) if ok]
    lonlat, values = lonlat[complete], values[complete]
    if len(stations) < 2:
        raise ValidationError("fewer than two complete stations")
    coords = project_equirectangular(lonlat)
    if cfg["detrend"]:
        resid, effects = detrend_two_way_anova(values)
    else:
        resid, effects = values, None
    data = SpatialDataset(coords=coords, obs=resid.T, labels=stations)
    iu = np.triu_indices(data.n, 1)
    d = data.distances[iu]
    report = {
        "n_stations": len(stations),
        "n_excluded": len(excluded),
        "excluded": excluded,
        "n_years": len(years),
        "projection": PROJECTION,
        "distance_km": {"min": float(d.min()), "median": float(np.median(d)), "max": float(d.max())},
        "detrended": bool(cfg["detrend"]),
    }
    if effects is not None:
        report["grand_mean"] = effects["mu"]
    out = Path(cfg["out_dir"])
    header, rows = write_site_csv_rows(data)
    header = header[:3] + [f"rep_{y}" for y in years]
    run = Run("ingest", cfg, inputs=[cfg["panel"]], extra={"projection": PROJECTION})
    run.add_csv(out / "data.csv", header, rows)
    run.add_json(out / "report.json", report)
    return run, EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "approximate": cmd_approximate,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "mc-study": cmd_mc_study,
    "ingest": cmd_ingest,
}


# --- argument handling -------------------------------------------------------


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="sievecov", description="Sieve estimation of isotropic covariance functions.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file overriding the defaults")
        sp.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="worker processes (mc-study)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = common(sub.add_parser("simulate", help="simulate replicated data"))
    sp.add_argument("--setting", type=int)
    sp.add_argument("--family", choices=sorted(FAMILIES))
    sp.add_argument("--params", type=_floats, help="comma-separated, sigma2 first")
    sp.add_argument("--nugget", type=float)
    sp.add_argument("--n-sites", type=int, dest="n_sites")
    sp.add_argument("--domain", type=float)
    sp.add_argument("--r", type=int)
    sp.add_argument("--out")

    sp = common(sub.add_parser("approximate", help="select the sieve order for a target"))
    sp.add_argument("--family", choices=sorted(FAMILIES))
    sp.add_argument("--params", type=_floats)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--m-max", type=int, dest="m_max")
    sp.add_argument("--out-dir", dest="out_dir")

    sp = common(sub.add_parser("fit", help="sieve maximum-likelihood fit"))
    sp.add_argument("data", nargs="?")
    sp.add_argument("--m", type=int, help="fix the order instead of walking the schedule")
    sp.add_argument("--nugget", action="store_true", default=None)
    sp.add_argument("--detrend", action="store_true", default=None)
    sp.add_argument("--out-dir", dest="out_dir")

    sp = common(sub.add_parser("evaluate", help="score a fitted model against a setting"))
    sp.add_argument("model", nargs="?")
    sp.add_argument("--setting", type=int)
    sp.add_argument("--out")

    sp = common(sub.add_parser("mc-study", help="Monte Carlo comparison"))
    sp.add_argument("--setting", type=int)
    sp.add_argument("--n-sites", type=int, dest="n_sites")
    sp.add_argument("--r", type=int)
    sp.add_argument("--n-mc", type=int, dest="n_mc")
    sp.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m])
    sp.add_argument("--full-scale", action="store_true", default=None, dest="full_scale")
    sp.add_argument("--out-dir", dest="out_dir")

    sp = common(sub.add_parser("ingest", help="complete-case filter and detrend a station panel"))
    sp.add_argument("panel", nargs="?")
    sp.add_argument("--no-detrend", action="store_false", default=None, dest="detrend")
    sp.add_argument("--out-dir", dest="out_dir")
    return p


_NOT_CONFIG = {"command", "config", "print_config", "verbose"}


def resolve_config(args):
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(user) - set(cfg)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    for key, value in vars(args).items():
        if key in _NOT_CONFIG or value is None:
            continue
        if key in cfg:
            cfg[key] = value
        elif key != "threads":
            cfg[key] = value
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(json.dumps(cfg, sort_keys=True, indent=2))
            return EXIT_OK
        run, code = COMMANDS[args.command](cfg)
        for path in run.write():
            print(path)
        if code == EXIT_CONVERGENCE:
            print("warning: optimizer did not meet its convergence criterion", file=sys.stderr)
        return code
    except (ValidationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ConditioningError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONDITIONING
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
