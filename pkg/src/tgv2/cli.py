"""Command-line front end: ``tgv2 <command> [options]``.

Commands
--------
denoise        solve a denoising problem for one method
deblur         solve a deblurring problem (``--input`` is the blurred data)
eval           certified regularizer value of an image
compare        corrupt a clean image, solve with several methods, one CSV row each
adjoint-check  adjoint certification report for every operator pair
synth          write a synthetic test pattern

Exit status is 0 when every solve converged, 1 when one stopped at the
iteration cap, 2 on usage errors and 3 when a solve diverged or an evaluation
could not be certified.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .fields import ContractError
from .imageio import PGMError, read_kernel, read_pgm, write_pgm
from .operators import ConvolutionKernel, convolve, gaussian_kernel
from .problems import METHODS, EvaluationError, assemble, evaluate_tgv2, total_variation
from .solver import RegParams, SolverConfig, SolverDivergence, cp_solve
from .synth import PATTERNS, add_gaussian_noise, psnr, synth_pattern
from .verify import certification_report, run_certification

log = logging.getLogger("tgv2")

CSV_VERSION = "# tgv2-csv v1"
COMPARE_COLUMNS = ["method", "alpha0", "alpha1", "iters_used", "final_energy",
                   "res_u", "res_w", "res_dual", "psnr", "wall_seconds"]
HISTORY_COLUMNS = ["iter", "energy", "res_u", "res_w", "res_dual"]

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_USAGE, EXIT_FAILED = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, image: bool = True, solve: bool = True):
    if image:
        p.add_argument("--input", type=Path, help="input PGM image")
        p.add_argument("--pattern", choices=PATTERNS, help="use a synthetic pattern as input")
        p.add_argument("--size", default="64", help="pattern size N or WxH (default 64)")
    p.add_argument("--output", type=Path, help="output path")
    p.add_argument("--alpha0", type=float, help="weight of the second-order term")
    p.add_argument("--alpha1", type=float, help="weight of the first-order term")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="shorthand for alpha0 = 2*lambda, alpha1 = lambda")
    if solve:
        p.add_argument("--method", default="tgv2", help=f"one of {', '.join(METHODS)}")
        p.add_argument("--kernel", help='kernel file or "gaussian:sd=<s>,size=<n>"')
        p.add_argument("--iters", type=int, default=20000, help="iteration cap")
    p.add_argument("--tol", type=float, default=1e-6, help="stopping tolerance")
    p.add_argument("--noise-sd", type=float, default=0.0, help="Gaussian noise added to the input")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", type=Path, help="CSV output path")
    p.add_argument("--maxval", type=int, default=65535, choices=(255, 65535),
                   help="PGM maxval for written images")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgv2", description="TGV regularized denoising and deblurring")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("denoise", "denoise an image"), ("deblur", "deblur an image")):
        _common(sub.add_parser(name, help=text))
    _common(sub.add_parser("eval", help="certified regularizer value"), solve=False)
    p = sub.add_parser("compare", help="compare methods on a corrupted clean image")
    _common(p)
    p.set_defaults(method=",".join(METHODS))
    p = sub.add_parser("adjoint-check", help="adjoint certification report")
    p.add_argument("--output", type=Path, help="report path (default stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p = sub.add_parser("synth", help="write a synthetic pattern")
    p.add_argument("--pattern", choices=PATTERNS, required=True)
    p.add_argument("--size", default="64", help="N or WxH")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--maxval", type=int, default=65535, choices=(255, 65535))
    return ap


def parse_size(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)(?:x(\d+))?", text.strip())
    if not m:
        raise UsageError(f"bad --size {text!r}; expected N or WxH")
    w = int(m.group(1))
    return w, int(m.group(2) or w)


def parse_kernel(spec: Optional[str]) -> Optional[ConvolutionKernel]:
    if spec is None:
        return None
    m = re.fullmatch(r"gaussian:sd=([0-9.eE+-]+),size=(\d+)", spec.strip())
    if m:
        return gaussian_kernel(float(m.group(1)), int(m.group(2)))
    if spec.startswith("gaussian:"):
        raise UsageError(f"bad kernel spec {spec!r}; expected gaussian:sd=<s>,size=<n>")
    return read_kernel(spec)


def resolve_params(args) -> RegParams:
    given = (args.alpha0 is not None, args.alpha1 is not None)
    if args.lam is not None:
        if any(given):
            raise UsageError("give either --lambda or --alpha0/--alpha1, not both")
        return RegParams.from_lambda(args.lam)
    if not all(given):
        raise UsageError("give --lambda or both --alpha0 and --alpha1")
    return RegParams(args.alpha0, args.alpha1)


def load_input(args) -> np.ndarray:
    if (args.input is None) == (args.pattern is None):
        raise UsageError("give exactly one of --input and --pattern")
    if args.pattern is not None:
        w, h = parse_size(args.size)
        return synth_pattern(args.pattern, w, h)
    return read_pgm(args.input)


def parse_methods(text: str) -> list:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown method(s) {bad}; expected {', '.join(METHODS)}")
    return methods


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def write_history(path: Path, report) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CSV_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for i, (e, res) in enumerate(zip(report.energy_history, report.residual_history), 1):
            w.writerow([i, _fmt(e)] + [_fmt(v) for v in res])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _solve(f, method, params, kernel, args):
    prob = assemble(f, method, params, kernel)
    return cp_solve(prob, SolverConfig(max_iters=args.iters, tol=args.tol, seed=args.seed))


def cmd_solve(args, deblur: bool) -> int:
    params = resolve_params(args)
    methods = parse_methods(args.method)
    if len(methods) != 1:
        raise UsageError("--method takes a single method here; use compare for several")
    kernel = parse_kernel(args.kernel)
    if deblur and kernel is None:
        raise UsageError("deblur needs --kernel")
    if not deblur and kernel is not None:
        raise UsageError("denoise takes no --kernel; use deblur")
    if args.output is None:
        raise UsageError("--output is required")
    f = add_gaussian_noise(load_input(args), args.noise_sd, args.seed)
    rep = _solve(f, methods[0], params, kernel, args)
    write_pgm(rep.u, args.output, args.maxval)
    if args.csv:
        write_history(args.csv, rep)
    ru, rw, rd = rep.final_residuals
    print(f"{methods[0]}: {rep.termination} after {rep.iterations} iterations, "
          f"energy {rep.final_energy:.8g}, residuals {ru:.3g} {rw:.3g} {rd:.3g}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_eval(args) -> int:
    params = resolve_params(args)
    u = add_gaussian_noise(load_input(args), args.noise_sd, args.seed)
    res = evaluate_tgv2(u, params, tol=args.tol)
    tv = total_variation(u)
    row = {"alpha0": params.alpha0, "alpha1": params.alpha1, "tgv2": res.value, "gap": res.gap,
           "tv": tv, "iters_used": res.iterations}
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(CSV_VERSION + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(row))
            w.writerow([_fmt(v) for v in row.values()])
    print(f"tgv2 {res.value:.10g} (gap {res.gap:.3g}, {res.iterations} iterations), "
          f"alpha1*tv {params.alpha1 * tv:.10g}")
    return EXIT_OK


def _compare_one(job):
    method, f, params, kernel, iters, tol, seed = job
    t0 = time.perf_counter()
    try:
        rep = cp_solve(assemble(f, method, params, kernel),
                       SolverConfig(max_iters=iters, tol=tol, seed=seed))
    except (SolverDivergence, FloatingPointError) as e:
        return method, None, str(e), time.perf_counter() - t0
    return method, rep, None, time.perf_counter() - t0


def _crop(u, kernel):
    if kernel is None:
        return u
    ry, rx = kernel.radius
    return u[ry:u.shape[0] - ry, rx:u.shape[1] - rx]


def cmd_compare(args) -> int:
    params = resolve_params(args)
    methods = parse_methods(args.method)
    kernel = parse_kernel(args.kernel)
    if args.csv is None:
        raise UsageError("compare needs --csv")
    clean = load_input(args)
    blurred = convolve(clean, kernel) if kernel is not None else clean
    f = add_gaussian_noise(blurred, args.noise_sd, args.seed)
    ref = _crop(clean, kernel)
    outdir = args.output
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        write_pgm(f, outdir / "input.pgm", args.maxval)
    print(f"input psnr {psnr(f, ref):.4f} dB")

    jobs = [(m, f, params, kernel, args.iters, args.tol, args.seed) for m in methods]
    workers = max(1, min(len(jobs), int(os.environ.get("TGV2_THREADS", "1") or 1)))
    status = EXIT_OK
    with open(args.csv, "w", newline="") as fh:
        fh.write(CSV_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        fh.flush()
        if workers > 1:
            pool = ProcessPoolExecutor(workers)
            results = pool.map(_compare_one, jobs)
        else:
            pool = None
            results = map(_compare_one, jobs)
        try:
            # map yields in submission order, so rows follow the declared method order
            for method, rep, err, wall in results:
                if rep is None:
                    print(f"{method}: diverged: {err}", file=sys.stderr)
                    status = EXIT_FAILED
                    break
                u_eval = _crop(rep.u, kernel)
                q = psnr(u_eval, ref)
                ru, rw, rd = rep.final_residuals
                w.writerow([method, _fmt(params.alpha0), _fmt(params.alpha1), rep.iterations,
                            _fmt(rep.final_energy), _fmt(ru), _fmt(rw), _fmt(rd), _fmt(q),
                            f"{wall:.3f}"])
                fh.flush()
                if outdir is not None:
                    write_pgm(rep.u, outdir / f"{method}.pgm", args.maxval)
                print(f"{method}: {rep.termination} after {rep.iterations} iterations, psnr {q:.4f} dB")
                if not rep.converged and status == EXIT_OK:
                    status = EXIT_NOT_CONVERGED
        finally:
            if pool is not None:
                pool.shutdown(cancel_futures=True)
    return status


def cmd_adjoint(args) -> int:
    checks = run_certification(seed=args.seed, trials=args.trials)
    text = certification_report(checks)
    if args.output:
        args.output.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAILED


def cmd_synth(args) -> int:
    w, h = parse_size(args.size)
    u = add_gaussian_noise(synth_pattern(args.pattern, w, h), args.noise_sd, args.seed)
    write_pgm(u, args.output, args.maxval)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("denoise", "deblur"):
            return cmd_solve(args, args.command == "deblur")
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "adjoint-check":
            return cmd_adjoint(args)
        return cmd_synth(args)
    except (UsageError, ContractError, PGMError, OSError, ValueError) as e:
        print(f"tgv2 {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverDivergence, EvaluationError) as e:
        print(f"tgv2 {args.command}: failed: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
