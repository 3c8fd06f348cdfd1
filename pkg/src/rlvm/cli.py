"""rlvm - command-line experiment harness.

Usage:
    rlvm gen-request --synth constant --vms 10 --slots 8 --seed 1
    rlvm gen-request --trace-dir traces/ --vms 250 --seed 7
    rlvm run --request out/req.txt --method lr-mmt-pabfd
    rlvm train --request out/req.txt --iterations 50
    rlvm eval --request out/req.txt --model out/model.txt
    rlvm compare --requests a.txt b.txt --methods lr-mmt-ff rl-pabfd --seeds 0 1 2 --train

Exit codes: 0 ok, 2 usage, 3 trace/request data, 4 simulation, 5 training.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import pandas as pd

from . import __version__
from .agent import PolicyParams, load_params, save_params
from .config import METHODS, SimulationConfig, get_config
from .errors import RlvmError, UsageError
from .logging_config import log_error_message, log_summary_table, log_system_message, setup_logging
from .metrics import (
    SUMMARY_COLUMNS,
    TARGET_COLUMNS,
    median_by_method,
    per_slot_frame,
    summary_frame,
    summary_row,
    target_checks,
)
from .plots import BAR_METRICS, grouped_bars, per_slot_lines
from .ppo import CURVE_COLUMNS, train
from .simulator import EpisodeResult, run_episode
from .trace import (
    DAY_SLOT_COUNT,
    RequestSet,
    SynthSpec,
    build_request,
    read_request_file,
    spike_benchmark,
    synth_request,
    write_request_file,
)
from .utils import atomic_write_csv, ensure_dir

logger = logging.getLogger("rlvm.cli")


def _load_config(args: argparse.Namespace, **overrides) -> SimulationConfig:
    flat = {"sim.seed": args.seed}
    flat.update(overrides)
    return get_config(args.config, flat)


def _with_ppo_seed(config: SimulationConfig, seed: int) -> SimulationConfig:
    return config.model_copy(update={"ppo": config.ppo.model_copy(update={"seed": seed})})


def _write_episode(result: EpisodeResult, out_dir: Path) -> Tuple[Path, Path]:
    stem = f"{result.request}_{result.method}_s{result.seed}"
    slots_path = atomic_write_csv(out_dir / f"{stem}_slots.csv", per_slot_frame(result.accounting))
    row = summary_row(result.metrics, result.method, result.request, result.seed)
    summary_path = atomic_write_csv(out_dir / f"{stem}_summary.csv", summary_frame([row]))
    return slots_path, summary_path


def _train_policy(
    request: RequestSet, config: SimulationConfig, out_dir: Path, resume: Optional[str] = None
) -> PolicyParams:
    params = load_params(resume, config.ppo) if resume else None
    params, curve = train(request, config, params)
    model_path = save_params(params, out_dir / f"model_{request.name}_s{config.ppo.seed}.txt")
    curve_frame = pd.DataFrame(curve, columns=list(CURVE_COLUMNS))
    atomic_write_csv(out_dir / f"learning_curve_{request.name}_s{config.ppo.seed}.csv", curve_frame)
    logger.info(f"Saved model to {model_path} (iteration {params.iteration})")
    return params


def cmd_gen_request(args: argparse.Namespace) -> int:
    """Sample a request from traces or generate a synthetic one."""
    if bool(args.trace_dir) == bool(args.synth):
        raise UsageError("gen-request needs exactly one of --trace-dir or --synth")
    seed = args.seed if args.seed is not None else 0
    if args.trace_dir:
        request = build_request(
            args.trace_dir,
            args.vms,
            window_start=args.window_start,
            seed=seed,
            slot_count=args.slots,
            name=args.name,
        )
    elif args.synth == "spike":
        request = spike_benchmark(seed=seed, vm_count=args.vms, slot_count=args.slots)
    else:
        spec = SynthSpec(
            vm_count=args.vms,
            slot_count=args.slots,
            pattern=args.synth,
            amplitude=args.amplitude,
            period=args.period,
            duty=args.duty,
            baseline=args.baseline,
            seed=seed,
            name=args.name,
        )
        request = synth_request(spec)

    out_dir = ensure_dir(args.out_dir)
    path = write_request_file(request, args.output or out_dir / f"{request.name}.txt")
    mean_demand = sum(p.d_vm for p in request.profiles) / max(len(request), 1)
    log_summary_table(
        [{"request": request.name, "vms": len(request), "slots": request.slot_count, "mean_d_vm": mean_demand, "file": str(path)}],
        ["request", "vms", "slots", "mean_d_vm", "file"],
        title="Request",
    )
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    """Simulate one request with one method."""
    config = _load_config(args)
    request = read_request_file(args.request)
    params = None
    if args.method == "rl-pabfd":
        if args.model:
            params = load_params(args.model, config.ppo)
        elif args.train:
            out_dir = ensure_dir(args.out_dir)
            params = _train_policy(request, _with_ppo_seed(config, config.seed), out_dir)
        else:
            raise UsageError("rl-pabfd needs --model or --train")

    log_system_message(f"{args.method} on {request.name} ({len(request)} VMs, {request.slot_count} slots)", "run")
    result = run_episode(request, config, args.method, seed=config.seed, params=params)
    slots_path, summary_path = _write_episode(result, ensure_dir(args.out_dir))
    log_summary_table(
        [summary_row(result.metrics, result.method, result.request, result.seed)],
        SUMMARY_COLUMNS,
        title="Summary",
    )
    logger.info(f"Wrote {slots_path} and {summary_path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train an RL-PABFD policy and save it with its learning curve."""
    overrides: Dict[str, object] = {"ppo.seed": args.seed}
    if args.iterations is not None:
        overrides["train.iterations"] = args.iterations
    if args.rollouts is not None:
        overrides["ppo.rollout_episodes"] = args.rollouts
    config = _load_config(args, **overrides)
    request = read_request_file(args.request)
    log_system_message(
        f"PPO on {request.name}: {config.ppo.iterations} iteration(s) x {config.ppo.rollout_episodes} episode(s)",
        "train",
    )
    params = _train_policy(request, config, ensure_dir(args.out_dir), resume=args.resume)
    if args.model_out:
        save_params(params, args.model_out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Greedy evaluation of a saved policy."""
    config = _load_config(args)
    request = read_request_file(args.request)
    params = load_params(args.model, config.ppo)
    result = run_episode(request, config, "rl-pabfd", seed=config.seed, params=params)
    _write_episode(result, ensure_dir(args.out_dir))
    row = summary_row(result.metrics, result.method, result.request, result.seed)
    row["selected_per_slot"] = result.selected_per_slot
    log_summary_table([row], [*SUMMARY_COLUMNS, "selected_per_slot"], title="Evaluation")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    """Run every (request, method, seed) cell and plot the comparison."""
    unknown = [m for m in args.methods if m not in METHODS]
    if unknown:
        raise UsageError(f"Unknown method(s) {unknown}. Choose from: {', '.join(METHODS)}")
    if "rl-pabfd" in args.methods and not (args.model or args.train):
        raise UsageError("rl-pabfd needs --model or --train")
    config = _load_config(args)
    seeds = args.seeds if args.seeds else [config.seed]
    requests = [read_request_file(path) for path in args.requests]
    out_dir = ensure_dir(args.out_dir)

    policies: Dict[Tuple[str, int], PolicyParams] = {}
    if "rl-pabfd" in args.methods:
        shared = load_params(args.model, config.ppo) if args.model else None
        for request in requests:
            for seed in seeds:
                policies[(request.name, seed)] = shared or _train_policy(
                    request, _with_ppo_seed(config, seed), out_dir
                )

    cells = [(request, method, seed) for request in requests for method in args.methods for seed in seeds]
    log_system_message(
        f"{len(requests)} request(s) x {len(args.methods)} method(s) x {len(seeds)} seed(s)", "compare"
    )

    def run_cell(cell) -> Tuple[Optional[EpisodeResult], Optional[str]]:
        request, method, seed = cell
        try:
            return run_episode(request, config, method, seed=seed, params=policies.get((request.name, seed))), None
        except RlvmError as exc:
            return None, f"{request.name}/{method}/s{seed}: {exc}"

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(cell) for cell in cells]

    results = [result for result, _ in outcomes if result is not None]
    failures = [error for _, error in outcomes if error is not None]
    for result in results:
        _write_episode(result, out_dir)

    summary = summary_frame([summary_row(r.metrics, r.method, r.request, r.seed) for r in results])
    atomic_write_csv(out_dir / "summary.csv", summary)
    if results:
        medians = median_by_method(summary)
        for metric in BAR_METRICS:
            grouped_bars(medians, metric, out_dir)
        first_seed = seeds[0]
        for request in requests:
            series = {
                r.method: per_slot_frame(r.accounting)
                for r in results
                if r.request == request.name and r.seed == first_seed
            }
            if series:
                per_slot_lines(series, "ec_total", request.name, out_dir)
                per_slot_lines(series, "migrations", request.name, out_dir)
        log_summary_table(medians.to_dict("records"), ["request", "method", *BAR_METRICS], title="Median over seeds")
        targets = target_checks(medians)
        if not targets.empty:
            atomic_write_csv(out_dir / "targets.csv", targets)
            log_summary_table(targets.to_dict("records"), list(TARGET_COLUMNS), title="Agent targets")
            missed = targets[~targets["passed"]]
            if not missed.empty:
                logger.warning(f"{len(missed)} of {len(targets)} agent target(s) missed")

    if failures:
        for failure in failures:
            log_error_message(f"cell failed: {failure}")
        return 4
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlvm",
        description="Slot-based consolidation simulator: LR-MMT baselines and RL-PABFD",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__.split("Usage:")[1],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="Flat key=value config file")
    parser.add_argument("--seed", type=int, help="Random seed (default: sim.seed, else 0)")
    parser.add_argument("--out-dir", default="out", help="Output directory (default: out)")
    parser.add_argument("--log-level", default=None, help="Log level (default: RLVM_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-request", help="Write a request file")
    gen.add_argument("--trace-dir", help="Directory of Bitbrains-format per-VM traces")
    gen.add_argument(
        "--synth", choices=["constant", "square-wave", "sinusoid-with-noise", "sinusoid", "spike"]
    )
    gen.add_argument("--vms", type=int, default=10)
    gen.add_argument("--slots", type=int, default=DAY_SLOT_COUNT)
    gen.add_argument("--window-start", type=int, default=0)
    gen.add_argument("--amplitude", type=float, default=500.0)
    gen.add_argument("--baseline", type=float, default=0.0)
    gen.add_argument("--period", type=int, default=2)
    gen.add_argument("--duty", type=float, default=0.5)
    gen.add_argument("--name")
    gen.add_argument("-o", "--output", help="Request file path (default: <out-dir>/<name>.txt)")
    gen.set_defaults(handler=cmd_gen_request)

    run = sub.add_parser("run", help="Simulate one request with one method")
    run.add_argument("--request", required=True)
    run.add_argument("--method", choices=METHODS, default="lr-mmt-pabfd")
    run.add_argument("--model", help="Policy file for rl-pabfd")
    run.add_argument("--train", action="store_true", help="Train a policy first (rl-pabfd)")
    run.set_defaults(handler=cmd_run)

    tr = sub.add_parser("train", help="Train the VM-selection policy")
    tr.add_argument("--request", required=True)
    tr.add_argument("--iterations", type=int)
    tr.add_argument("--rollouts", type=int, help="Episodes per iteration")
    tr.add_argument("--resume", help="Continue from a saved policy")
    tr.add_argument("--model-out", help="Extra copy of the final policy")
    tr.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", help="Evaluate a saved policy greedily")
    ev.add_argument("--request", required=True)
    ev.add_argument("--model", required=True)
    ev.set_defaults(handler=cmd_eval)

    cmp_ = sub.add_parser("compare", help="Compare methods over requests and seeds")
    cmp_.add_argument("--requests", nargs="+", required=True)
    cmp_.add_argument("--methods", nargs="+", default=list(METHODS))
    cmp_.add_argument("--seeds", nargs="+", type=int)
    cmp_.add_argument("--model", help="Policy file shared by all rl-pabfd cells")
    cmp_.add_argument("--train", action="store_true", help="Train one policy per request and seed")
    cmp_.set_defaults(handler=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level or os.getenv("RLVM_LOG_LEVEL", "INFO"))
    try:
        return args.handler(args)
    except RlvmError as exc:
        log_error_message(f"{type(exc).__name__}: {exc}")
        return exc.exit_code
    except KeyboardInterrupt:
        log_error_message("Interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
