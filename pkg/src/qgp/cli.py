"""Command-line entry point.

Commands::

    simulate      synthesize clean and noisy signals
    fit           sample training data, fit the GP, write a run report
    predict       prediction-grid CSVs from a run report
    hhl solve     one HHL evaluation on a matrix/rhs pair
    aqc compile   compile a unitary with a CNOT budget
    report        Table-style summary of a run report

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
Errors are written to stderr as a single JSON object.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import io
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, aqc, gp, hhl, lpe
from .errors import ConfigError, NumericalError, QGPError
from .kernels import CHANNELS, LineHyperParams

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
BACKEND_NAMES = {"classical": "classical", "hhl-exact": "hhl_exact", "hhl-sampled": "hhl_sampled"}


# -- configuration ----------------------------------------------------------

def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: str, d: Any, allowed: set[str]) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown key {section + '.' if section else ''}{k}")
    return d


def _build(section: str, cls, d: dict, exclude: Sequence[str] = ()):
    _check_keys(section, d, _fields(cls) - set(exclude))
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass
class SamplingConfig:
    counts: tuple[int, int, int] = lpe.DEFAULT_COUNTS  # (n_vi, n_ii, n_vj)
    jitter: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        self.counts = tuple(int(c) for c in self.counts)
        if len(self.counts) != 3:
            raise ValueError("counts must have three entries (n_vi, n_ii, n_vj)")


@dataclass
class NoiseConfig:
    """Either ``relative`` (std as a fraction of each channel amplitude) or
    absolute standard deviations for all three channels."""

    relative: float | None = lpe.DEFAULT_NOISE_FRACTION
    sigma_ii: float | None = None
    sigma_vj: float | None = None
    sigma_vi: float | None = None

    def __post_init__(self) -> None:
        absolute = [self.sigma_ii, self.sigma_vj, self.sigma_vi]
        if any(s is not None for s in absolute):
            if any(s is None for s in absolute):
                raise ValueError("give all of sigma_ii, sigma_vj, sigma_vi or none")
            self.relative = None
        elif self.relative is None or self.relative < 0:
            raise ValueError("relative noise must be a non-negative number")


@dataclass
class ExperimentConfig:
    network: lpe.NetworkConfig = field(default_factory=lpe.NetworkConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    backend: str = "classical"
    optimizer: gp.FitOptions = field(default_factory=gp.FitOptions)
    hhl: hhl.HHLConfig = field(default_factory=hhl.HHLConfig)
    aqc: aqc.AQCOptions | None = None
    target_condition: float = 512.0
    output: str = "out"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys("", d, _fields(cls))
        kw: dict[str, Any] = {}
        if "network" in d:
            kw["network"] = _build("network", lpe.NetworkConfig, d["network"])
        if "sampling" in d:
            kw["sampling"] = _build("sampling", SamplingConfig, d["sampling"])
        if "noise" in d:
            kw["noise"] = _build("noise", NoiseConfig, d["noise"])
        if "backend" in d:
            kw["backend"] = _backend_name(d["backend"])
        if "optimizer" in d:
            kw["optimizer"] = _build("optimizer", gp.FitOptions, d["optimizer"])
        if "hhl" in d:
            kw["hhl"] = _build("hhl", hhl.HHLConfig, d["hhl"], exclude=("aqc",))
        if d.get("aqc") is not None:
            kw["aqc"] = _build("aqc", aqc.AQCOptions, d["aqc"])
        for k in ("target_condition", "output"):
            if k in d:
                kw[k] = d[k]
        try:
            cfg = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if not isinstance(cfg.output, str):
            raise ConfigError("output: expected a directory path string")
        if not (isinstance(cfg.target_condition, (int, float)) and cfg.target_condition > 1):
            raise ConfigError("target_condition must be a number > 1")
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        hcfg = dataclasses.asdict(dataclasses.replace(self.hhl, aqc=None))
        hcfg.pop("aqc")
        return {
            "network": dataclasses.asdict(self.network),
            "sampling": {**dataclasses.asdict(self.sampling), "counts": list(self.sampling.counts)},
            "noise": dataclasses.asdict(self.noise),
            "backend": self.backend,
            "optimizer": dataclasses.asdict(self.optimizer),
            "hhl": hcfg,
            "aqc": dataclasses.asdict(self.aqc) if self.aqc else None,
            "target_condition": self.target_condition,
            "output": self.output,
        }

    def apply_overrides(self, args: argparse.Namespace) -> None:
        if getattr(args, "backend", None):
            self.backend = _backend_name(args.backend)
        if getattr(args, "seed", None) is not None:
            self.sampling.seed = args.seed
            self.optimizer.seed = args.seed
            self.hhl = dataclasses.replace(self.hhl, seed=args.seed)
        try:
            if getattr(args, "shots", None) is not None:
                self.hhl = dataclasses.replace(self.hhl, shots=args.shots)
            if getattr(args, "nl", None) is not None:
                self.hhl = dataclasses.replace(self.hhl, n_eval=args.nl)
            if getattr(args, "rescale", None) is not None:
                self.hhl = dataclasses.replace(self.hhl, rescale_mode=args.rescale)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if getattr(args, "out", None):
            self.output = args.out

    def make_backend(self) -> gp.Backend:
        hcfg = dataclasses.replace(self.hhl, aqc=self.aqc)
        return gp.Backend(self.backend, hcfg, target_condition=self.target_condition)


def _backend_name(name: Any) -> str:
    if isinstance(name, str):
        key = name.replace("_", "-")
        if key in BACKEND_NAMES:
            return BACKEND_NAMES[key]
    raise ConfigError(f"backend: must be one of {sorted(BACKEND_NAMES)}, got {name!r}")


# -- output helpers ---------------------------------------------------------

def _fmt(x: Any) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header: Sequence[str], columns: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(o: Any):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _stamp(seed: int | None) -> dict:
    import scipy

    return {"qgp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "seed": seed}


def _metadata(**extra) -> dict:
    return {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"), **extra}


def read_matrix(path: str | Path) -> np.ndarray:
    """Numeric CSV, optional header row; a single row or column reads as a vector."""
    try:
        rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
    if data.size == 0:
        raise ConfigError(f"{path}: no numeric data")
    return data


def read_unitary(path: str | Path) -> np.ndarray:
    """JSON ``{"real": [[...]], "imag": [[...]]}`` or a real-valued CSV."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc.msg}") from exc
        _check_keys("target", d, {"real", "imag"})
        if "real" not in d:
            raise ConfigError("target: missing key real")
        re = np.asarray(d["real"], dtype=float)
        im = np.asarray(d.get("imag", np.zeros_like(re)), dtype=float)
        if re.shape != im.shape:
            raise ConfigError("target: real and imag parts differ in shape")
        return re + 1j * im
    return read_matrix(p).astype(complex)


# -- commands ---------------------------------------------------------------

def _noisy_bundle(cfg: ExperimentConfig) -> lpe.SignalBundle:
    clean = lpe.simulate_signals(cfg.network)
    nz = cfg.noise
    if nz.relative is not None:
        return lpe.relative_noise(clean, nz.relative, cfg.sampling.seed)
    return lpe.add_noise(clean, nz.sigma_ii, nz.sigma_vj, nz.sigma_vi, cfg.sampling.seed)


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    cfg.apply_overrides(args)
    out = _outdir(cfg.output)
    bundle = _noisy_bundle(cfg)
    write_csv(out / "signals.csv",
              ["t", "v_i", "v_j", "i_i", "noisy_v_i", "noisy_v_j", "noisy_i_i"],
              [bundle.t] + [bundle.clean(c) for c in ("v_i", "v_j", "i_i")]
              + [bundle.noisy(c) for c in ("v_i", "v_j", "i_i")])
    write_json(out / "bundle.json", {"config": cfg.to_dict(), "bundle": bundle.to_dict(),
                                     "stamp": _stamp(cfg.sampling.seed)})
    _emit({"signals": str(out / "signals.csv"), "bundle": str(out / "bundle.json"),
           "rows": int(bundle.t.size)})
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = ExperimentConfig.load(args.config)
    cfg.apply_overrides(args)
    out = _outdir(cfg.output)
    bundle = _noisy_bundle(cfg)
    backend = cfg.make_backend()
    s = cfg.sampling
    rep = lpe.estimate(bundle, s.counts, backend, cfg.optimizer, s.jitter, s.seed)
    fit = rep.fit.to_dict()
    wall = fit.pop("wall_time")
    report = {
        "config": cfg.to_dict(),
        "R_hat": rep.R_hat, "L_hat": rep.L_hat,
        "abs_error_R": rep.abs_error_R, "abs_error_L": rep.abs_error_L,
        "fit": fit,
        "hhl_diagnostics": rep.fit.backend_stats if backend.is_quantum else None,
        "training_set": rep.data.to_dict(),
        "stamp": _stamp(s.seed),
        "metadata": _metadata(wall_time=wall),
    }
    write_json(out / "report.json", report)
    trace = rep.fit.nlml_trace
    write_csv(out / "nlml_trace.csv", ["evaluation", "nlml", "best_nlml"],
              [list(range(1, len(trace) + 1)), rep.fit.evaluations, trace])
    _emit({"report": str(out / "report.json"), "R_hat": rep.R_hat, "L_hat": rep.L_hat,
           "abs_error_R": rep.abs_error_R, "abs_error_L": rep.abs_error_L})
    return EXIT_OK


def _load_report(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read report {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"report {path} is not valid JSON: {exc.msg}") from exc


def cmd_predict(args: argparse.Namespace) -> int:
    report = _load_report(args.report)
    for key in ("config", "fit", "training_set"):
        if key not in report:
            raise ConfigError(f"report: missing key {key}")
    cfg = ExperimentConfig.from_dict(report["config"])
    if args.out:
        cfg.output = args.out
    if args.n_points < 1:
        raise ConfigError("n-points must be >= 1")
    out = _outdir(cfg.output)
    theta = LineHyperParams.from_dict(report["fit"]["theta_star"])
    data = gp.TrainingSet.from_dict(report["training_set"])
    bundle = lpe.simulate_signals(cfg.network)
    grid = lpe.prediction_grid(bundle, theta, data, args.n_points)
    files = {}
    for c in CHANNELS:
        tab = grid[c]
        path = out / f"prediction_{c}.csv"
        write_csv(path, ["t", "mean", "variance", "truth"],
                  [tab["t"], tab["mean"], tab["variance"], tab["truth"]])
        files[c] = str(path)
    amp = cfg.network.amplitude("v_i")
    _emit({"files": files, "rows": args.n_points,
           "rms_error_v_i": lpe.rms_error(grid["v_i"]),
           "rms_error_v_i_relative": lpe.rms_error(grid["v_i"]) / amp})
    return EXIT_OK


def cmd_hhl_solve(args: argparse.Namespace) -> int:
    A = read_matrix(args.matrix)
    b = read_matrix(args.rhs).ravel()
    if A.shape[0] != A.shape[1]:
        raise ConfigError(f"matrix must be square, got {A.shape}")
    if A.shape[0] != b.size:
        raise ConfigError(f"rhs length {b.size} does not match matrix size {A.shape[0]}")
    cfg = ExperimentConfig.load(args.config)
    cfg.apply_overrides(args)
    hcfg = cfg.hhl
    if hcfg.n_eval is None:
        # standalone solves have no conditioning step; use the full register
        hcfg = dataclasses.replace(hcfg, n_eval=hcfg.eval_qubits_cap)
    if args.backend == "hhl-sampled":
        hcfg = dataclasses.replace(hcfg, backend="sampled")
    elif args.backend in (None, "hhl-exact"):
        hcfg = dataclasses.replace(hcfg, backend="exact")
    else:
        raise ConfigError("hhl solve: --backend must be hhl-exact or hhl-sampled")
    hcfg = dataclasses.replace(hcfg, aqc=cfg.aqc)
    classical = float(b @ np.linalg.solve(A, b)) if args.quantity == "quadratic-form" \
        else float(np.sum(np.linalg.solve(A, b) ** 2))
    if args.quantity == "quadratic-form":
        res = hhl.quadratic_form(A, b, hcfg)
        payload = {"quantity": "quadratic_form", "value": res.quadratic_form, **res.to_dict()}
    else:
        est, est_exact, se, circ = hhl.solve_norm(*hhl.pad_system(A, b), hcfg)
        meta = circ.metadata
        payload = {"quantity": "solution_norm_squared", "value": est,
                   "exact_backend_value": est_exact, "standard_error": se,
                   "success_probability": meta.get("success_probability"),
                   "eval_qubits_used": meta.get("n_l"), "circuit_width": circ.width,
                   "circuit_depth": circ.depth, "two_qubit_count": circ.two_qubit_count,
                   "inversion_constant": meta.get("C"), "spectrum_bound": meta.get("scale")}
        if "aqc" in meta:
            payload["aqc"] = meta["aqc"]
    payload["classical_value"] = classical
    payload["relative_error"] = abs(payload["value"] - classical) / abs(classical) if classical else None
    _write_or_emit(args.out, "hhl_result.json", payload)
    return EXIT_OK


def cmd_aqc_compile(args: argparse.Namespace) -> int:
    U = read_unitary(args.target)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ConfigError(f"target must be a square matrix, got {U.shape}")
    width = int(round(math.log2(U.shape[0])))
    if 1 << width != U.shape[0]:
        raise ConfigError("target dimension must be a power of two")
    budget = args.budget if args.budget is not None else aqc.cnot_lower_bound(width)
    try:
        opts = aqc.AQCOptions(args.max_iters, args.tolerance, args.restarts, args.seed or 0, budget)
        spec = aqc.AnsatzSpec(width, budget)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    res = aqc.compile(U, spec, opts)
    payload = res.to_dict()
    payload["cnot_budget"] = budget
    payload["cnot_lower_bound"] = aqc.cnot_lower_bound(width)
    if args.out:
        out = _outdir(args.out)
        write_json(out / "circuit.json", json.loads(res.circuit.to_json()))
    _write_or_emit(args.out, "compilation.json", payload)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    report = _load_report(args.report)
    for key in ("config", "R_hat", "L_hat", "abs_error_R", "abs_error_L"):
        if key not in report:
            raise ConfigError(f"report: missing key {key}")
    net = report["config"]["network"]
    rows = [("R", net["R_true"], report["R_hat"], report["abs_error_R"]),
            ("L", net["L_true"], report["L_hat"], report["abs_error_L"])]
    backend = report["config"].get("backend", "?")
    lines = [f"backend: {backend}", f"{'quantity':<9}{'actual':>14}{'estimate':>14}{'abs error %':>14}"]
    for name, actual, est, err in rows:
        lines.append(f"{name:<9}{actual:>14.6g}{est:>14.6g}{err:>14.4f}")
    print("\n".join(lines))
    if args.out:
        out = _outdir(args.out)
        write_csv(out / "summary.csv", ["quantity", "actual", "estimate", "abs_error_percent"],
                  [[r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
                   [r[3] for r in rows]])
    return EXIT_OK


def _outdir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc.strerror}") from exc
    return p


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True, default=_json_default))


def _write_or_emit(out: str | None, name: str, payload: dict) -> None:
    if out:
        write_json(_outdir(out) / name, payload)
    print(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))


# -- argument parsing -------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # route usage errors through the JSON channel
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="experiment JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def _hhl_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=sorted(BACKEND_NAMES))
    p.add_argument("--shots", type=int)
    p.add_argument("--nl", type=int, help="evaluation qubits (fit: sized from the condition "
                   "number; hhl solve: the register cap)")
    p.add_argument("--rescale", choices=hhl.RESCALE_MODES)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qgp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qgp {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("simulate", help="synthesize clean and noisy signals")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the GP and estimate R and L")
    _common(p)
    _hhl_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="prediction grid from a run report")
    p.add_argument("--report", required=True)
    p.add_argument("--n-points", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    h = sub.add_parser("hhl", help="HHL utilities")
    hsub = h.add_subparsers(dest="hhl_command", parser_class=_Parser, required=True)
    p = hsub.add_parser("solve", help="HHL estimate for one linear system")
    p.add_argument("--matrix", required=True, help="CSV of a square SPD matrix")
    p.add_argument("--rhs", required=True, help="CSV of the right-hand side")
    p.add_argument("--quantity", choices=("quadratic-form", "solution-norm"), default="quadratic-form")
    _common(p)
    _hhl_flags(p)
    p.set_defaults(func=cmd_hhl_solve)

    a = sub.add_parser("aqc", help="approximate quantum compiling")
    asub = a.add_subparsers(dest="aqc_command", parser_class=_Parser, required=True)
    p = asub.add_parser("compile", help="compile a unitary with a CNOT budget")
    p.add_argument("--target", required=True, help="JSON {real, imag} or real CSV matrix")
    p.add_argument("--budget", type=int, help="CNOT budget (default: generic lower bound)")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=3000)
    _common(p, config=False)
    p.set_defaults(func=cmd_aqc_compile)

    p = sub.add_parser("report", help="summarise a run report")
    p.add_argument("--report", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
    err = {"error": type(exc).__name__, "message": str(msg), "exit_code": code}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (QGPError, ValueError, KeyError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except np.linalg.LinAlgError as exc:
        return _fail(EXIT_NUMERICAL, exc)


if __name__ == "__main__":
    sys.exit(main())
