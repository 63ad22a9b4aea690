"""Command-line entry point.

Exit codes: 0 ok, 2 validation, 3 fault confirmed, 4 runtime, 66 I/O.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import urllib.error
import urllib.parse
import urllib.request
from pathlib import Path

from . import data_path
from .analysis import TimeSeries, power_spectrum, residual
from .kernel import KernelError
from .ltl import LtlSyntaxError, NotCoSafe, StateBlowup, to_automaton, parse_ltl
from .scenario import ScenarioError, load_scenario
from .tdf import TdfError, load_tdf

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FAULT = 3
EXIT_RUNTIME = 4
EXIT_IO = 66

log = logging.getLogger("galstwin")


def _setup_logging() -> None:
    level = os.environ.get("TILA_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_inputs(args):
    td = load_tdf(args.twin)
    scenario = load_scenario(args.scenario) if getattr(args, "scenario", None) else None
    return td, scenario


# ------------------------------------------------------------ commands
def cmd_validate(args) -> int:
    td = load_tdf(args.twin)
    print(f"OK {td.name}: {len(td.domains)} clock domains, {len(td.model_names)} models")
    return EXIT_OK


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_run(args) -> int:
    from .runner import execute_scenario

    td, scenario = _load_inputs(args)
    scenario = scenario.with_overrides(seed=args.seed, duration=args.duration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = execute_scenario(td, scenario, out_dir=out, pacing=args.real_time)
    report = result.report
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    runner = result.runner
    _write_csv(out / "inspection_times.csv", ["episode", "start_tick", "end_tick", "duration_ms"],
               [(i, a, b, ms) for i, (a, b, ms) in enumerate(runner.episodes())])

    conveyor = scenario.bindings.get("conveyor")
    label = f"plant.{conveyor}.power"
    spectrum = None
    if label in result.store.labels() and result.store.count(label) >= 1024:
        spectrum = power_spectrum(result.store.series(label, "power"), 1024)
        (out / "spectrum.csv").write_text(spectrum.to_csv())
    else:
        (out / "spectrum.csv").write_text("freq_hz,magnitude\n")

    robot = scenario.bindings.get("robot")
    residuals: list[TimeSeries] = []
    if f"plant.{robot}.torque" in result.store.labels():
        for j in (1, 2):
            twin = runner.mapped_series(f"{robot}.tau{j}")
            if twin is not None:
                plant = result.store.series(f"plant.{robot}.torque", f"tau{j}")
                residuals.append(residual(twin, plant, f"{robot}.tau{j}"))
    header = ["time_s"] + [f"residual_tau{j}" for j in range(1, len(residuals) + 1)]
    rows = zip(residuals[0].times, *(r.values for r in residuals)) if residuals else []
    _write_csv(out / "torque_residual.csv", header, rows)

    if args.figures:
        from . import figures

        figures.inspection_histogram(report["inspection"]["timesMs"], out / "inspection_times.png")
        if spectrum is not None:
            figures.spectrum_plot(spectrum, out / "spectrum.png")
        figures.residual_plot(residuals, out / "torque_residual.png")

    fr = report.get("faultReport")
    summary = {"episodes": report["inspection"]["episodes"],
               "meanMs": report["inspection"]["meanMs"],
               "confirmed": fr["confirmed"] if fr else None}
    print(json.dumps(summary))
    return EXIT_FAULT if fr and fr["confirmed"] else EXIT_OK


def cmd_benchmark(args) -> int:
    from .benchmark import fidelity_benchmark

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = fidelity_benchmark(args.replicas, ticks=args.ticks, repetitions=args.repetitions)
    (out / "fidelity.csv").write_text(result.to_csv())
    (out / "fidelity.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    if args.figures:
        from . import figures

        figures.fidelity_plot(result, out / "fidelity.png")
    sys.stdout.write(result.to_csv())
    return EXIT_OK


def _split_listen(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"--listen must be host:port, got {text!r}")
    return host, int(port)


def cmd_serve(args) -> int:
    from .service import LiveTwin, serve

    td = load_tdf(args.twin)
    scenario = load_scenario(args.scenario or data_path("nominal.scenario.json"))
    host, port = _split_listen(args.listen)
    serve(LiveTwin(td, scenario, pacing=not args.fast), host, port, args.token)
    return EXIT_OK


def _http(url: str, data: bytes | None = None) -> tuple[int, object]:
    req = urllib.request.Request(url, data=data,
                                 headers={"Content-Type": "application/json"} if data else {})
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, json.loads(resp.read() or b"null")
    except urllib.error.HTTPError as exc:
        body = exc.read()
        try:
            return exc.code, json.loads(body)
        except ValueError:
            return exc.code, body.decode(errors="replace")


def _http_exit(status: int) -> int:
    if status < 400:
        return EXIT_OK
    return EXIT_VALIDATION if status < 500 else EXIT_RUNTIME


def cmd_query(args) -> int:
    host, port = _split_listen(args.listen)
    url = f"http://{host}:{port}/data/query?" + urllib.parse.urlencode({"q": args.q})
    status, body = _http(url)
    if status >= 400:
        _err(json.dumps(body))
        return _http_exit(status)
    rows = body or []
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_observe(args) -> int:
    formula = parse_ltl(args.spec)
    if args.listen:
        host, port = _split_listen(args.listen)
        status, body = _http(f"http://{host}:{port}/create/observer",
                             json.dumps({"spec": args.spec}).encode())
        print(json.dumps(body))
        return _http_exit(status)
    print(to_automaton(formula).dump())
    return EXIT_OK


# ---------------------------------------------------------------- main
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="galstwin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a twin description file")
    v.add_argument("--twin", required=True)
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run a scenario and export report and CSV data")
    r.add_argument("--twin", required=True)
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--duration", type=float, help="override the scenario duration [s]")
    r.add_argument("--real-time", action="store_true", help="pace ticks to the wall clock")
    r.add_argument("--figures", action="store_true", help="also render PNG figures")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("benchmark", help="fidelity (h-l) tick-time sweep")
    b.add_argument("--replicas", type=int, default=5)
    b.add_argument("--out", required=True)
    b.add_argument("--ticks", type=int, default=10_000)
    b.add_argument("--repetitions", type=int, default=3)
    b.add_argument("--figures", action="store_true")
    b.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("serve", help="serve the HTTP API over a live twin")
    s.add_argument("--twin", required=True)
    s.add_argument("--listen", default="127.0.0.1:8080")
    s.add_argument("--token")
    s.add_argument("--scenario", help="plant scenario for the live twin (default: nominal)")
    s.add_argument("--fast", action="store_true", help="do not pace to the wall clock")
    s.set_defaults(func=cmd_serve)

    q = sub.add_parser("query", help="query a running server, print CSV")
    q.add_argument("--listen", default="127.0.0.1:8080")
    q.add_argument("--q", required=True)
    q.set_defaults(func=cmd_query)

    o = sub.add_parser("observe", help="compile an observer; register it with --listen")
    o.add_argument("--spec", required=True)
    o.add_argument("--listen")
    o.set_defaults(func=cmd_observe)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TdfError, ScenarioError, NotCoSafe, LtlSyntaxError, StateBlowup) as exc:
        for line in getattr(exc, "diagnostics", [str(exc)]):
            _err(f"error: {line}")
        return EXIT_VALIDATION
    except OSError as exc:
        if isinstance(exc, urllib.error.URLError) or isinstance(exc, ConnectionError):
            _err(f"error: cannot reach server: {exc}")
        else:
            _err(f"error: {exc}")
        return EXIT_IO
    except (KernelError, ArithmeticError, ValueError) as exc:
        _err(f"error: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
