"""Sample the 100-dimensional banana target with each method and dump (xi_1, xi_2).

One directory per method under ``--output-dir`` holds ``samples.csv`` (20000 rows) and
``coverage.csv``; a ``coverage.csv`` at the top compares all methods.

    python scripts/rosenbrock.py --methods mcmc vf uki
"""
import argparse
import logging
import pathlib
import time

from vflow import pipeline
from vflow.config import ROSENBROCK_METHODS, resolve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--methods", nargs="+", default=list(ROSENBROCK_METHODS))
    ap.add_argument("--scale", choices=("desk", "paper"), default="desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output-dir", default="runs/rosenbrock")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    out = pathlib.Path(args.output_dir)
    summary = []
    for method in args.methods:
        cfg = resolve({"scale": args.scale, "seed": args.seed, "rosenbrock": {"method": method}})
        start = time.perf_counter()
        res = pipeline.run_rosenbrock(cfg)
        seconds = time.perf_counter() - start
        sub = out / method
        sub.mkdir(parents=True, exist_ok=True)
        (sub / "samples.csv").write_text(pipeline.samples_csv(res.samples[:, :2],
                                                              ["xi_1", "xi_2"]))
        (sub / "coverage.csv").write_text(pipeline.csv_text(
            ("mode", "center_1", "center_2", "fraction"),
            [(i + 1, *c, f) for i, (c, f) in enumerate(zip(res.centers, res.coverage))]))
        summary.append((method, *res.coverage, seconds))
        logging.info("%s: coverage %s in %.0f s", method, res.coverage, seconds)
    (out / "coverage.csv").write_text(pipeline.csv_text(
        ("method", "coverage_1", "coverage_2", "seconds"), summary))
    print((out / "coverage.csv").read_text(), end="")


if __name__ == "__main__":
    main()
