"""Command-line harness: dataset generation, single solves, training runs,
experiment sweeps and micro-benchmarks.

All tabular output is CSV with a header row; every CSV embeds the full
scenario config and master seed as leading ``#``-comment lines so the file
is sufficient to regenerate itself. Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import channel, kernels, learn, solvers
from .config import SystemConfig

try:
    from importlib.metadata import version as _pkg_version
    VERSION = _pkg_version("risbf")
except Exception:  # pragma: no cover - package not installed
    VERSION = "0.0.0"

ALGOS = ("wmmse-pi", "pinet", "pinet-plus", "pinet-imcsi", "random-phase")
LEARNED = ("pinet", "pinet-plus", "pinet-imcsi")
SWEEP_AXES = ("iterations", "power", "users", "elements", "rician", "bits", "nmse")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _write_csv(path: str, config: SystemConfig, seed: int, header: list[str],
               rows: list[list]) -> None:
    """CSV with the config snapshot and seed embedded as comment lines."""
    with open(path, "w", newline="") as f:
        f.write(f"# version: {VERSION}\n")
        f.write(f"# config: {json.dumps(config.to_dict(), sort_keys=True)}\n")
        f.write(f"# seed: {seed}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _load_dataset(path: str):
    try:
        return channel.load_dataset(path)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
        raise DataError(f"cannot load dataset {path!r}: {err}") from err


def _load_checkpoint(args, algo: str):
    if algo not in LEARNED:
        return None
    if not args.checkpoint:
        raise UsageError(f"algo {algo!r} requires --checkpoint")
    try:
        return learn.TrainableParams.load(args.checkpoint)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
        raise DataError(f"cannot load checkpoint {args.checkpoint!r}: {err}") from err


def _solve_one(algo: str, los, config: SystemConfig, i_o: int, params,
               rng: np.random.Generator, varrho: float,
               score_avg: bool = False):
    """One solve on a fresh realization; returns (wsr, iterations, seconds).

    With nonzero channel-estimation error the solver only sees the
    corrupted estimate. ``score_avg`` reports the average WSR of the
    produced phases over fresh fading draws instead of the
    single-realization WSR; it is implied by varrho > 0 so estimated-CSI
    rows stay comparable to perfect-CSI ones. Under varrho > 0 each
    scoring frame optimizes its precoder on an estimate and realizes the
    rate on the matching true channel, so the reported value genuinely
    degrades with the error level.
    """
    score_avg = score_avg or varrho > 0
    cs = channel.sample_channels(los, config, rng)
    est = channel.corrupt_channels(cs, varrho, rng) if varrho > 0 else cs
    t0 = time.perf_counter()
    if algo == "wmmse-pi":
        rep = solvers.wmmse_pi(est, config, i_o, rng)
        theta, wsr_val, iters = rep.final_state.theta, rep.wsr, i_o
    elif algo in ("pinet", "pinet-plus"):
        rep = solvers.wmmse_pinet_forward(est, params, config, i_o=i_o,
                                          mode=algo, rng=rng)
        theta, wsr_val, iters = rep.final_state.theta, rep.wsr, i_o
    elif algo == "pinet-imcsi":
        stream = (channel.corrupt_channels(channel.sample_channels(los, config, rng),
                                           varrho, rng)
                  for _ in range(i_o + 1))
        theta = solvers.wmmse_pinet_imcsi(stream, params, config, i_o=i_o, rng=rng)
        wsr_val, iters = None, i_o
    elif algo == "random-phase":
        rep = solvers.random_phase_baseline(est, config, rng)
        theta, wsr_val, iters = rep.final_state.theta, rep.wsr, 0
    else:
        raise UsageError(f"unknown algo {algo!r}")
    elapsed = time.perf_counter() - t0
    if score_avg or wsr_val is None:
        wsr_val = solvers.avg_wsr_estimated(theta, los, config, varrho,
                                            n_samples=10, rng=rng)
    return float(wsr_val), iters, elapsed


def _spawned_rngs(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(count)]


def _run_samples(algo, samples, config, i_o, params, seed, varrho, threads,
                 score_avg=False):
    """Per-sample solves with deterministic per-index seeding; the thread
    pool never changes the output order."""
    rngs = _spawned_rngs(seed, len(samples))
    work = [(los, rng) for los, rng in zip(samples, rngs)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(
                lambda a: _solve_one(algo, a[0], config, i_o, params, a[1],
                                     varrho, score_avg),
                work))
    return [_solve_one(algo, los, config, i_o, params, rng, varrho, score_avg)
            for los, rng in work]


# ---------------------------------------------------------------------------
# verbs


def cmd_gen(args) -> int:
    try:
        config = SystemConfig.load(args.config) if args.config else SystemConfig()
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as err:
        raise DataError(f"invalid config: {err}") from err
    if args.seed is not None:
        config = SystemConfig.from_dict({**config.to_dict(), "seed": args.seed})
    samples = channel.generate_dataset(config, args.count)
    channel.save_dataset(args.out, config, samples)
    print(f"wrote {len(samples)} LOS samples to {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    config, samples = _load_dataset(args.data)
    if args.limit is not None:
        samples = samples[:args.limit]
    if not samples:
        raise DataError("dataset holds no samples")
    params = _load_checkpoint(args, args.algo)
    seed = args.seed if args.seed is not None else config.seed
    results = _run_samples(args.algo, samples, config, args.iters, params,
                           seed, args.nmse, args.threads)
    rows = [[i, args.algo, iters, w]
            for i, (w, iters, _) in enumerate(results)]
    _write_csv(args.out, config, seed, ["sample", "algo", "iterations", "wsr"], rows)
    if args.report:
        doc = {
            "version": VERSION,
            "algo": args.algo,
            "iterations": args.iters,
            "seed": seed,
            "config": config.to_dict(),
            "mean_wsr": float(np.mean([w for w, _, _ in results])),
            "mean_wall_time_s": float(np.mean([dt for _, _, dt in results])),
            "wsr": [w for w, _, _ in results],
        }
        with open(args.report, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    print(f"{args.algo}: mean WSR "
          f"{np.mean([w for w, _, _ in results]):.6f} over {len(results)} samples")
    return EXIT_OK


def _axis_config(config: SystemConfig, axis: str, value) -> SystemConfig:
    d = config.to_dict()
    if axis == "power":
        d["p_t_dbm"] = float(value)
    elif axis == "users":
        d["k"] = int(value)
    elif axis == "elements":
        d["n"] = int(value)
    elif axis == "rician":
        d["kappa"] = float(value)
    elif axis == "bits":
        d["phase_bits"] = value  # "inf" or an int, both understood
    return SystemConfig.from_dict(d)


def _parse_axis_values(axis: str, raw: list[str]):
    vals = []
    for v in raw:
        if axis == "bits" and v == "inf":
            vals.append("inf")
        elif axis in ("users", "elements", "iterations", "bits"):
            vals.append(int(v))
        else:
            vals.append(float(v))
    return vals


def cmd_sweep(args) -> int:
    config, samples = _load_dataset(args.data)
    if args.limit is not None:
        samples = samples[:args.limit]
    if not samples:
        raise DataError("dataset holds no samples")
    algos = args.algos.split(",")
    for a in algos:
        if a not in ALGOS:
            raise UsageError(f"unknown algo {a!r}")
    values = _parse_axis_values(args.axis, args.values.split(","))
    seed = args.seed if args.seed is not None else config.seed

    rows = []
    for value in values:
        cfg = _axis_config(config, args.axis, value)
        if args.axis in ("users", "elements"):
            # geometry-changing axes need fresh LOS draws at the new sizes
            pts = channel.generate_dataset(cfg, len(samples))
        else:
            pts = samples
        i_o = value if args.axis == "iterations" else args.iters
        varrho = value if args.axis == "nmse" else args.nmse
        for algo in algos:
            params = _load_checkpoint(args, algo)
            res = _run_samples(algo, pts, cfg, i_o, params, seed, varrho,
                               args.threads, score_avg=args.axis == "nmse")
            wsrs = [w for w, _, _ in res]
            rows.append([
                args.axis, value, algo,
                float(np.mean(wsrs)), float(np.std(wsrs)),
                float(np.median(wsrs)), len(wsrs),
                float(np.mean([dt for _, _, dt in res])),
            ])
            print(f"{args.axis}={value} {algo}: mean WSR {np.mean(wsrs):.6f}")
    _write_csv(args.out, config, seed,
               ["axis", "value", "algo", "mean_wsr", "std_wsr", "median_wsr",
                "n_samples", "mean_wall_time_s"], rows)
    return EXIT_OK


def cmd_train(args) -> int:
    config, samples = _load_dataset(args.data)
    if args.variant not in LEARNED:
        raise UsageError(f"variant must be one of {LEARNED}")
    hyper = learn.TrainHyper()
    if args.hyper:
        try:
            with open(args.hyper) as f:
                overrides = json.load(f)
            hyper = learn.TrainHyper(**{**hyper.__dict__, **overrides})
        except (OSError, json.JSONDecodeError, TypeError) as err:
            raise DataError(f"invalid hyper file: {err}") from err
    init = None
    if args.resume:
        try:
            init = learn.TrainableParams.load(args.resume)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
            raise DataError(f"cannot resume from {args.resume!r}: {err}") from err
    seed = args.seed if args.seed is not None else config.seed
    result = learn.train(samples, config, args.variant, hyper,
                         np.random.default_rng(seed), i_o=args.iters,
                         init_params=init)
    result.params.save(args.out)
    if args.trace:
        _write_csv(args.trace, config, seed, ["step", "loss"],
                   [[i, float(v)] for i, v in enumerate(result.loss_trace)])
    print(f"trained {args.variant} (I_O={args.iters}); "
          f"best holdout loss {result.best_holdout:.6f}; checkpoint {args.out}")
    return EXIT_OK


def _parse_algo_iters(text: str) -> list[tuple[str, int]]:
    pairs = []
    for part in text.split(","):
        name, _, iters = part.partition("=")
        if name not in ALGOS:
            raise UsageError(f"unknown algo {name!r}")
        pairs.append((name, int(iters) if iters else 10))
    return pairs


def cmd_bench(args) -> int:
    config, samples = _load_dataset(args.data)
    if not samples:
        raise DataError("dataset holds no samples")
    pairs = _parse_algo_iters(args.algos)
    seed = args.seed if args.seed is not None else config.seed
    backends = [kernels.BACKEND]
    if args.backends == "both":
        backends = ["numba", "numpy"] if kernels.HAVE_NUMBA else ["numpy"]

    kernel_sets = {
        "numpy": (kernels.pi_iterate_numpy, kernels.pi_step_numpy),
        "numba": (kernels.pi_iterate_numba, kernels.pi_step_numba),
    }
    saved = (kernels.pi_iterate, kernels.pi_step_kernel)
    rows = []
    try:
        for backend in backends:
            kernels.pi_iterate, kernels.pi_step_kernel = kernel_sets[backend]
            for algo, i_o in pairs:
                params = _load_checkpoint(args, algo)
                rngs = _spawned_rngs(seed, args.runs)
                times, wsrs = [], []
                # warm-up solve outside the timed region (JIT compilation)
                _solve_one(algo, samples[0], config, i_o, params,
                           np.random.default_rng(seed), 0.0)
                for r in range(args.runs):
                    los = samples[r % len(samples)]
                    w, _, dt = _solve_one(algo, los, config, i_o, params,
                                          rngs[r], 0.0)
                    times.append(dt * 1e3)
                    wsrs.append(w)
                rows.append([
                    algo, backend, i_o, args.runs,
                    float(statistics.median(times)),
                    float(np.percentile(times, 90)),
                    float(np.mean(times)), float(np.std(times)),
                    float(np.mean(wsrs)),
                ])
                print(f"{algo}@{i_o} [{backend}]: median "
                      f"{statistics.median(times):.3f} ms over {args.runs} runs")
    finally:
        kernels.pi_iterate, kernels.pi_step_kernel = saved
    _write_csv(args.out, config, seed,
               ["algo", "backend", "iterations", "runs", "median_ms", "p90_ms",
                "mean_ms", "std_ms", "mean_wsr"], rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="risbf",
                description="RIS-assisted MU-MISO joint beamforming toolkit")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="generate a LOS dataset")
    g.add_argument("--config", help="SystemConfig JSON file (default: built-ins)")
    g.add_argument("--seed", type=int, default=None, help="override config seed")
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="run one algorithm over a dataset")
    s.add_argument("data", help="LOS dataset file")
    s.add_argument("--algo", required=True, choices=ALGOS)
    s.add_argument("--iters", type=int, default=10, help="outer iterations I_O")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--checkpoint", help="trained parameters (learned algos)")
    s.add_argument("--nmse", type=float, default=0.0,
                   help="channel estimation error power ratio")
    s.add_argument("--limit", type=int, default=None, help="use first N samples")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True, help="CSV output path")
    s.add_argument("--report", help="optional JSON summary (includes timings)")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("train", help="train an unfolded variant")
    t.add_argument("data", help="LOS dataset file")
    t.add_argument("--variant", required=True, choices=LEARNED)
    t.add_argument("--iters", type=int, default=10, help="unrolled depth I_O")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--hyper", help="JSON file overriding trainer defaults")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--trace", help="loss-trace CSV path")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("sweep", help="WSR statistics along an experiment axis")
    w.add_argument("data", help="LOS dataset file")
    w.add_argument("--axis", required=True, choices=SWEEP_AXES)
    w.add_argument("--values", required=True,
                   help="comma-separated axis values ('inf' allowed for bits)")
    w.add_argument("--algos", required=True, help="comma-separated algorithms")
    w.add_argument("--iters", type=int, default=10)
    w.add_argument("--seed", type=int, default=None)
    w.add_argument("--checkpoint")
    w.add_argument("--nmse", type=float, default=0.0)
    w.add_argument("--limit", type=int, default=None)
    w.add_argument("--threads", type=int, default=1)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", help="per-solve timing microbenchmark")
    b.add_argument("data", help="LOS dataset file")
    b.add_argument("--algos", required=True,
                   help="comma-separated algo=iters pairs, e.g. wmmse-pi=38,pinet-plus=3")
    b.add_argument("--runs", type=int, default=50)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--checkpoint")
    b.add_argument("--backends", choices=["active", "both"], default="active")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, RuntimeError, np.linalg.LinAlgError,
            ValueError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
