"""Command-line interface: ``vflow {pretrain,invert,rosenbrock,metrics,replay}``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import difftensor as dt
from . import randfield as rf
from .config import (METHODS, PROBLEMS, ROSENBROCK_METHODS, RunConfig, load_config_file, merge,
                     parse_assignment, resolve, to_dict)
from .errors import ConfigError, NumericError, SolverError

log = logging.getLogger("vflow")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, with_method=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. loop.k_max=5")
    p.add_argument("--problem", choices=PROBLEMS)
    if with_method:
        p.add_argument("--method", choices=METHODS)
    p.add_argument("--d", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--threads", type=int)
    p.add_argument("--dataset-size", type=int)
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="scale", action="store_const", const="desk")
    scale.add_argument("--paper-scale", dest="scale", action="store_const", const="paper")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vflow", description="Variational-flow Bayesian inversion")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("pretrain", help="fit the FNO surrogate on prior samples")
    _common(p, with_method=False)
    p = sub.add_parser("invert", help="run one inversion method on a PDE problem")
    _common(p)
    p.add_argument("--pretrained", help="checkpoint written by 'pretrain'")
    p = sub.add_parser("rosenbrock", help="sample the 100-dimensional banana target")
    _common(p, with_method=False)
    p.add_argument("--method", dest="rosen_method", choices=ROSENBROCK_METHODS)
    p = sub.add_parser("metrics", help="aggregate report.csv files from run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--output", help="summary CSV path (default: print)")
    p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("replay", help="re-run a manifest and verify its CSVs byte for byte")
    p.add_argument("manifest")
    p.add_argument("--output-dir")
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args) -> dict:
    out: dict = {}
    for key in ("problem", "method", "d", "delta", "seed", "output_dir", "threads", "scale",
                "pretrained"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    if getattr(args, "dataset_size", None) is not None:
        out.setdefault("pretrain", {})["dataset_size"] = args.dataset_size
    if getattr(args, "rosen_method", None) is not None:
        out.setdefault("rosenbrock", {})["method"] = args.rosen_method
    for text in getattr(args, "set", []):
        out = merge(out, parse_assignment(text))
    return out


def config_from_args(args) -> RunConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    return resolve(file_values, _overrides(args))


# -- artifacts -----------------------------------------------------------------

def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Artifacts:
    """Writes files into the output directory and remembers their hashes."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hashes: dict = {}

    def write(self, name: str, data) -> Path:
        blob = data.encode("utf-8") if isinstance(data, str) else data
        path = self.dir / name
        path.write_bytes(blob)
        self.hashes[name] = sha256(blob)
        return path

    def manifest(self, command: str, cfg: RunConfig, **extra) -> Path:
        doc = {"command": command, "version": __version__, "config": to_dict(cfg),
               "artifacts": dict(sorted(self.hashes.items())), **extra}
        path = self.dir / MANIFEST
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


# -- commands ------------------------------------------------------------------

def cmd_pretrain(cfg: RunConfig) -> dict:
    from . import pipeline
    art = Artifacts(cfg.output_dir)
    problem = pipeline.build_problem(cfg)
    out = pipeline.pretrain(cfg, problem)
    art.write("fno.vfpar", dt.encode_params(out.model.state()))
    art.write("dataset.vfgrid", rf.encode_grid(out.inputs) + rf.encode_grid(out.outputs))
    art.write("pretrain_loss.csv", pipeline.csv_text(
        ("epoch", "loss"), [(i + 1, v) for i, v in enumerate(out.history)]))
    dataset = {"records": ["inputs", "outputs"], "count": int(len(out.inputs)),
               "grid": list(problem.surrogate_basis.grid_shape),
               "coefficients": "standard normal", "seed": cfg.seed}
    art.write("dataset.json", json.dumps(dataset, indent=2, sort_keys=True) + "\n")
    art.manifest("pretrain", cfg)
    return {"final_loss": out.history[-1] if out.history else None}


def cmd_invert(cfg: RunConfig) -> dict:
    from . import pipeline
    art = Artifacts(cfg.output_dir)
    problem = pipeline.build_problem(cfg)
    model = None
    if cfg.method != "pcn" and cfg.method != "uki-fdm":
        if cfg.pretrained:
            model = pipeline.load_fno(cfg, problem, cfg.pretrained)
        else:
            model = pipeline.pretrain(cfg, problem).model
            art.write("fno_pretrained.vfpar", dt.encode_params(model.state()))
    res = pipeline.invert(cfg, problem, model)
    art.write("stage_log.csv", res.stage_log)
    art.write("samples.csv", pipeline.samples_csv(res.samples))
    art.write("mu_post.csv", pipeline.samples_csv(res.mu_post[None]))
    art.write("report.csv", pipeline.csv_text(pipeline.REPORT_COLUMNS, [res.report_row(cfg)]))
    timings = res.extras.get("timings")
    if timings is not None:
        (art.dir / "timings.json").write_text(json.dumps({"stage_seconds": timings}) + "\n")
    art.manifest("invert", cfg, converged=bool(res.converged), stages_run=int(res.stages_run))
    return {"e_I": res.e_I, "e_S_final": res.e_S_final, "converged": res.converged}


def cmd_rosenbrock(cfg: RunConfig) -> dict:
    from . import pipeline
    art = Artifacts(cfg.output_dir)
    out = pipeline.run_rosenbrock(cfg)
    art.write("samples.csv", pipeline.samples_csv(out.samples[:, :2], ["xi_1", "xi_2"]))
    rows = [(i + 1, c[0], c[1], f) for i, (c, f) in enumerate(zip(out.centers, out.coverage))]
    art.write("coverage.csv", pipeline.csv_text(("mode", "center_1", "center_2", "fraction"),
                                                rows))
    art.manifest("rosenbrock", cfg, **{k: v for k, v in out.extras.items()})
    return {"coverage": out.coverage.tolist()}


def cmd_metrics(runs, output=None) -> dict:
    from .bench.matrix import SUMMARY_COLUMNS, summarize
    from .pipeline import csv_text, read_csv_rows
    rows = []
    for run in runs:
        path = Path(run) / "report.csv" if Path(run).is_dir() else Path(run)
        rows.extend(read_csv_rows(path.read_text(encoding="utf-8")))
    text = csv_text(SUMMARY_COLUMNS, summarize(rows))
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return {}


COMMANDS = {"pretrain": cmd_pretrain, "invert": cmd_invert, "rosenbrock": cmd_rosenbrock}


def cmd_replay(manifest_path, output_dir=None, threads=None) -> bool:
    """Re-run a manifest's command; True when every CSV matches its recorded hash."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    values = dict(doc["config"])
    values["output_dir"] = str(output_dir or manifest_path.parent / "replay")
    if threads:
        values["threads"] = threads
    cfg = resolve(values)
    COMMANDS[doc["command"]](cfg)
    fresh = json.loads((Path(cfg.output_dir) / MANIFEST).read_text(encoding="utf-8"))
    ok = True
    for name, digest in sorted(doc["artifacts"].items()):
        if not name.endswith(".csv"):
            continue
        same = fresh["artifacts"].get(name) == digest
        ok &= same
        print(f"{name}: {'identical' if same else 'DIFFERS'}")
    return ok


def main(argv=None) -> int:
    from .parallel import set_threads
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "metrics":
            cmd_metrics(args.runs, args.output)
            return EXIT_OK
        if args.command == "replay":
            set_threads(args.threads)
            return EXIT_OK if cmd_replay(args.manifest, args.output_dir, args.threads) \
                else EXIT_NUMERIC
        cfg = config_from_args(args)
        set_threads(cfg.threads)
        summary = COMMANDS[args.command](cfg)
        print(json.dumps(summary, default=_jsonable, sort_keys=True))
        return EXIT_OK
    except (ConfigError, UsageError) as exc:
        print(f"vflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"vflow: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, SolverError, FloatingPointError) as exc:
        print(f"vflow: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


if __name__ == "__main__":
    sys.exit(main())
