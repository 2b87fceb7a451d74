"""Command-line entry point.

Settings are merged in three layers: built-in defaults, an optional JSON file
given with ``--config``, then explicit flags. The merged result is written to
``manifest.json`` next to every output, together with input and output
checksums, so a run can be repeated from the manifest alone.

Exit codes: 0 success, 1 usage or configuration error, 2 data or parse error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .bench import (BenchmarkCase, comparison_table, lorenz_cases, NOISE_SEED_OFFSET, run_benchmark,
                    write_benchmark)
from .causal import CausalRanking, default_jobs, granger_network, pcc_network, select_and_forecast
from .datasets import (IntegrationError, LorenzConfig, ParseError, add_observation_noise,
                       integrate_coupled_lorenz, load_csv, save_csv)
from .embedding import ConfigError, SeriesMatrix
from .model import ArchitectureConfig
from .numerics import DimensionError, DivergenceError
from .training import train_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "jobs": None,
    "out": "sticm-out",
    "data": None,
    "lorenz": {},
    "steps": None,
    "noise_sigma": 0.0,
    "target": 0,
    "m": 50,
    "q": 30,
    "architecture": {"L": 16},
    "mode": "pcc",
    "ranking": None,
    "methods": ["sticm", "ar", "hes"],
    "seeds": [0, 1, 2, 3, 4],
    "targets_per_seed": 3,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _csv_list(text: str, kind=str) -> list:
    try:
        return [kind(p.strip()) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _target(text: str):
    return int(text) if text.lstrip("-").isdigit() else text


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", type=Path, help="JSON settings file; flags override its values")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--jobs", type=int, help="parallel trainings (default: available cores)")
    g.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    d = data.add_argument_group("data")
    d.add_argument("--data", type=Path, help="CSV with a header row, one row per time point")
    d.add_argument("--subsystems", type=int, help="coupled Lorenz ring size when no --data is given")
    d.add_argument("--coupling", type=float)
    d.add_argument("--dt", type=float)
    d.add_argument("--sample-stride", type=int)
    d.add_argument("--transient-steps", type=int)
    d.add_argument("--steps", type=int, help="number of Lorenz samples")
    d.add_argument("--noise-sigma", "--noise", dest="noise_sigma", type=float)

    model = _Parser(add_help=False)
    a = model.add_argument_group("model")
    a.add_argument("--target", type=_target, help="target row index or column name")
    a.add_argument("--m", type=int, help="number of known time points used for training")
    a.add_argument("--L", type=int, help="embedding dimension; L - 1 values are forecast")
    a.add_argument("--hidden", type=lambda s: _csv_list(s, int), help="hidden widths, e.g. 32,32,32")
    a.add_argument("--dilations", type=lambda s: _csv_list(s, int))
    a.add_argument("--kernel-size", type=int)
    a.add_argument("--epochs", type=int, dest="max_epochs")
    a.add_argument("--lr", type=float, dest="learning_rate")
    a.add_argument("--lambda1", type=float)
    a.add_argument("--lambda2", type=float)
    a.add_argument("--lambda3", type=float)

    p = _Parser(prog="sticm", description="Spatiotemporal forecasting from short high-dimensional records.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common, data], help="write a coupled Lorenz record as CSV")
    sub.add_parser("train", parents=[common, data, model], help="train on m points and forecast L - 1")
    s = sub.add_parser("select", parents=[common, data, model], help="leave-one-out ranking and top-q retrain")
    s.add_argument("--q", type=int, help="number of inputs kept, target included")
    n = sub.add_parser("network", parents=[common, data, model], help="granger or pcc relation network")
    n.add_argument("--mode", choices=["granger", "pcc"])
    n.add_argument("--ranking", type=Path, help="ranking.json written by 'select' (granger mode)")
    b = sub.add_parser("benchmark", parents=[common, data, model], help="compare methods over seeds and targets")
    b.add_argument("--methods", type=_csv_list)
    b.add_argument("--dataset", help="'lorenz' or a CSV path")
    b.add_argument("--seeds", type=lambda s: _csv_list(s, int))
    b.add_argument("--targets-per-seed", type=int)
    b.add_argument("--q", type=int)
    return p


_LORENZ_FLAGS = {"subsystems": "subsystems", "coupling": "coupling", "dt": "dt",
                 "sample_stride": "sample_stride", "transient_steps": "transient_steps"}
_ARCH_FLAGS = ("L", "hidden", "dilations", "kernel_size", "max_epochs", "learning_rate",
               "lambda1", "lambda2", "lambda3")


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then flags that were actually given."""
    cfg = copy.deepcopy(DEFAULTS)
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = _merge(cfg, loaded)
    v = vars(args)
    for key in ("seed", "out", "jobs", "data", "steps", "noise_sigma", "target", "m", "q", "mode", "ranking",
                "methods", "seeds", "targets_per_seed"):
        if v.get(key) is not None:
            cfg[key] = str(v[key]) if isinstance(v[key], Path) else v[key]
    if v.get("dataset") is not None:
        cfg["data"] = None if v["dataset"] == "lorenz" else v["dataset"]
    for flag, field_name in _LORENZ_FLAGS.items():
        if v.get(flag) is not None:
            cfg["lorenz"][field_name] = v[flag]
    for flag in _ARCH_FLAGS:
        if v.get(flag) is not None:
            cfg["architecture"]["hidden_channels" if flag == "hidden" else flag] = v[flag]
    if cfg["jobs"] is None:
        cfg["jobs"] = default_jobs()
    cfg["architecture"]["seed"] = int(cfg["seed"])
    return cfg


def _architecture(cfg: dict, n: int) -> ArchitectureConfig:
    names = {f.name for f in fields(ArchitectureConfig)}
    unknown = set(cfg["architecture"]) - names
    if unknown:
        raise ConfigError(f"unknown architecture settings: {sorted(unknown)}")
    arch = ArchitectureConfig.from_dict({**cfg["architecture"], "input_dim": n})
    arch.validate()
    return arch


def _lorenz(cfg: dict, seed: int) -> LorenzConfig:
    names = {f.name for f in fields(LorenzConfig)}
    unknown = set(cfg["lorenz"]) - names
    if unknown:
        raise ConfigError(f"unknown lorenz settings: {sorted(unknown)}")
    try:
        return LorenzConfig(**{**cfg["lorenz"], "seed": seed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_record(cfg: dict, steps: int | None = None) -> SeriesMatrix:
    """CSV when ``data`` is set, otherwise a generated (optionally noisy) Lorenz record."""
    if cfg["data"]:
        path = Path(cfg["data"])
        if not path.exists():
            raise FileNotFoundError(f"data file not found: {path}")
        return load_csv(path)
    seed = int(cfg["seed"])
    lc = _lorenz(cfg, seed)
    n_steps = cfg["steps"] or steps
    if not n_steps or n_steps < 1:
        raise ConfigError("steps must be >= 1")
    X = integrate_coupled_lorenz(lc, int(n_steps))
    return add_observation_noise(X, float(cfg["noise_sigma"]), seed + NOISE_SEED_OFFSET)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = []

    class _Sink:
        def write(self, s):
            lines.append(s)

    w = csv.writer(_Sink(), lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _atomic_write(path, "".join(lines))


def _f(v) -> str:
    return repr(float(v))


def write_manifest(out: Path, command: str, cfg: dict, outputs: list[Path], timings: dict) -> Path:
    inputs = {}
    if cfg.get("data"):
        inputs[str(cfg["data"])] = _sha256(Path(cfg["data"]))
    if cfg.get("ranking") and Path(cfg["ranking"]).exists():
        inputs[str(cfg["ranking"])] = _sha256(Path(cfg["ranking"]))
    manifest = {
        "tool": "sticm",
        "version": __version__,
        "command": command,
        "config": cfg,
        "inputs": inputs,
        "outputs": {p.name: _sha256(p) for p in outputs},
        "timings_seconds": timings,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    path = out / "manifest.json"
    _atomic_write(path, _dump(manifest))
    return path


# commands ----------------------------------------------------------------------------------------

def cmd_generate(cfg: dict) -> tuple[list[Path], dict]:
    t0 = time.perf_counter()
    X = load_record({**cfg, "data": None}, steps=cfg["steps"] or 65)
    timings = {"generate": time.perf_counter() - t0}
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "data.csv"
    save_csv(X, path)
    return [path], timings


def _split(cfg: dict, record: SeriesMatrix, arch: ArchitectureConfig, need_truth: bool):
    m = int(cfg["m"])
    L = arch.L
    if not L <= m <= record.m:
        raise ConfigError(f"need L <= m <= {record.m} available points, got m={m}, L={L}")
    target = record.index_of(cfg["target"])
    truth = record.values[target, m: m + L - 1]
    if need_truth and L < 3:
        raise ConfigError(f"held-out errors need at least two forecast points, so L >= 3 (got L={L})")
    if need_truth and truth.size < L - 1:
        raise ConfigError(f"record has {record.m} points; held-out evaluation needs m + L - 1 = {m + L - 1}")
    return m, target, truth


def cmd_train(cfg: dict) -> tuple[list[Path], dict]:
    record = load_record(cfg, steps=int(cfg["m"]) + int(cfg["architecture"].get("L", 16)) - 1)
    arch = _architecture(cfg, record.n)
    m, target, truth = _split(cfg, record, arch, need_truth=False)
    t0 = time.perf_counter()
    net, res = train_model(record.head(m), target, arch)
    timings = {"train": time.perf_counter() - t0}
    out = Path(cfg["out"])
    written = [out / "predictions.csv", out / "training_curve.csv", out / "checkpoint.json",
               out / "result.json"]
    _write_predictions(written[0], m, res.predictions, truth)
    _write_csv(written[1], ["epoch", "loss_ds", "loss_fc", "loss_rec", "total"],
               [[e + 1] + [_f(v) for v in b.as_row()] for e, b in enumerate(res.training_curve)])
    _atomic_write(written[2], json.dumps(net.state_dict()))
    _atomic_write(written[3], _dump({**res.to_dict(), "target": record.names[target], "m": m, "L": arch.L}))
    return written, timings


def _write_predictions(path: Path, m: int, pred, truth) -> None:
    rows = []
    for i, v in enumerate(pred):
        actual = _f(truth[i]) if i < len(truth) else ""
        rows.append([i + 1, m + i + 1, _f(v), actual])
    _write_csv(path, ["step", "time", "predicted", "actual"], rows)


def cmd_select(cfg: dict) -> tuple[list[Path], dict]:
    L = int(cfg["architecture"].get("L", 16))
    record = load_record(cfg, steps=int(cfg["m"]) + L - 1)
    arch = _architecture(cfg, record.n)
    m, target, truth = _split(cfg, record, arch, need_truth=True)
    q = int(cfg["q"])
    if not 1 <= q <= record.n:
        raise ConfigError(f"q must lie in 1..{record.n}, got {q}")
    if arch.strict_embedding and q < record.n and q <= arch.L:
        raise ConfigError(f"the reduced model needs q > L, got q={q}, L={arch.L}")
    t0 = time.perf_counter()
    sel = select_and_forecast(record, target, m, arch, q, jobs=int(cfg["jobs"]))
    timings = {"select": time.perf_counter() - t0}
    out = Path(cfg["out"])
    written = [out / "ranking.json", out / "predictions.csv"]
    _atomic_write(written[0], _dump(sel.ranking.to_dict()))
    _write_predictions(written[1], m, sel.predictions, truth)
    return written, timings


def cmd_network(cfg: dict) -> tuple[list[Path], dict]:
    mode = cfg["mode"]
    if mode not in ("granger", "pcc"):
        raise ConfigError(f"unknown network mode {mode!r}")
    L = int(cfg["architecture"].get("L", 16))
    t0 = time.perf_counter()
    if mode == "pcc":
        record = load_record(cfg, steps=int(cfg["m"]))
        m = min(int(cfg["m"]), record.m)
        net = pcc_network(record.head(m))
    else:
        if not cfg.get("ranking"):
            raise UsageError("granger mode needs --ranking pointing at ranking.json from 'select'")
        rpath = Path(cfg["ranking"])
        if not rpath.exists():
            raise UsageError(f"missing prerequisite file: {rpath} (run 'select' first)")
        try:
            ranking = CausalRanking.from_dict(json.loads(rpath.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{rpath}: not a ranking file ({exc})") from None
        record = load_record(cfg, steps=int(cfg["m"]) + L - 1)
        arch = _architecture(cfg, len(ranking.selected))
        if arch.strict_embedding and len(ranking.selected) - 1 <= arch.L:
            raise ConfigError(f"leave-one-out over {len(ranking.selected)} variables needs L < "
                              f"{len(ranking.selected) - 1}, got L={arch.L}")
        _split({**cfg, "target": ranking.target}, record, arch, need_truth=True)
        net = granger_network(record, ranking.selected, int(cfg["m"]), arch, jobs=int(cfg["jobs"]))
    timings = {"network": time.perf_counter() - t0}
    path = Path(cfg["out"]) / "network.json"
    _atomic_write(path, _dump({"mode": mode, **net.to_dict()}))
    return [path], timings


def cmd_benchmark(cfg: dict) -> tuple[list[Path], dict]:
    L = int(cfg["architecture"].get("L", 16))
    m = int(cfg["m"])
    methods = list(cfg["methods"])
    known = {"sticm", "sticm-select", "ar", "hes"}
    if not methods or set(methods) - known:
        raise ConfigError(f"methods must be drawn from {sorted(known)}, got {methods}")
    if cfg["data"]:
        record = load_record(cfg)
        cases = [BenchmarkCase(record, record.index_of(cfg["target"]), m, int(cfg["seed"]), "data")]
        n = record.n
    else:
        lc = _lorenz(cfg, 0)
        n = lc.n
        cases = None
    arch = _architecture(cfg, n)
    if cases is None:
        t_gen = time.perf_counter()
        cases = lorenz_cases(cfg["seeds"], int(cfg["targets_per_seed"]), m, L, float(cfg["noise_sigma"]),
                             {k: v for k, v in cfg["lorenz"].items() if k != "seed"})
        gen_time = time.perf_counter() - t_gen
    else:
        gen_time = 0.0
    q = int(cfg["q"])
    if "sticm-select" in methods and arch.strict_embedding and q < n and q <= arch.L:
        raise ConfigError(f"the reduced model needs q > L, got q={q}, L={arch.L}")
    for c in cases:
        _split({**cfg, "target": c.target, "m": c.m}, c.record, arch, need_truth=True)
    t0 = time.perf_counter()
    reports = run_benchmark(cases, methods, arch, q=q, jobs=int(cfg["jobs"]))
    truths = {(c.seed, c.target): c.record.values[c.target, c.m: c.m + L - 1] for c in cases}
    timings = {"generate": gen_time, "benchmark": time.perf_counter() - t0,
               "per_report": [{"method": r.method, "seed": r.run_seed, "target": r.target, "seconds": r.wall_time}
                              for r in reports]}
    written = write_benchmark(reports, cfg["out"], truths)
    for row in comparison_table(reports):
        print(f"{row['method']:>14s}  median nRMSE {row['median_nrmse']:.4f}  median PCC {row['median_pcc']:.4f}"
              f"  ({row['runs'] - row['failed']}/{row['runs']} ok)")
    failed = [r for r in reports if not r.ok]
    if failed:
        timings["failed_reports"] = [r.error for r in failed]
    return written, timings


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "select": cmd_select,
    "network": cmd_network,
    "benchmark": cmd_benchmark,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        outputs, timings = COMMANDS[args.command](cfg)
        write_manifest(Path(cfg["out"]), args.command, cfg, outputs, timings)
    except (UsageError, ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, IntegrationError, FloatingPointError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    failed = timings.get("failed_reports") if args.command == "benchmark" else None
    if failed:
        print(f"{len(failed)} method run(s) failed; see reports.json", file=sys.stderr)
        return EXIT_DIVERGED if all("Divergence" in e or "FloatingPoint" in e for e in failed) else EXIT_DATA
    return EXIT_OK
