"""Command-line entry point: ``mirgmdp solve | simulate | verify``.

Exit statuses: 0 on success, 1 when a verification fails, 2 on a
configuration error (bad flags, unreadable or malformed instance files,
instances that violate a mechanism's requirements).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from mirgmdp import catalog, dp, verify
from mirgmdp.bic import validate_bic_instance
from mirgmdp.errors import ConfigurationError, MirError
from mirgmdp.gmdp import EXACT, MonteCarlo, TerminalMode, TerminalRewards, w_value
from mirgmdp.instance_io import load_instance
from mirgmdp.policies import ogp_policy
from mirgmdp.priors import TEMPLATES, Instance, generate_instance
from mirgmdp.simulator import (
    MECHANISMS,
    WELFARE_COLUMNS,
    convergence_bound,
    mechanism_runner,
    replication_rng,
    welfare_samples,
    write_welfare_csv,
)

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_CONFIGURATION_ERROR = 2
OPTIMALITY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully parsed command configuration.

    Attributes:
        instance: The problem instance.
        source: How the instance was obtained, echoed in output headers.
        mechanism: Mechanism name for ``simulate``.
        horizons: Strictly increasing horizons.
        replications: Replications per horizon.
        terminal_mode: ``"exact"`` or a Monte Carlo setting.
        seed: Master seed.
        out: Output path or directory; ``None`` writes to stdout.
        traces: Optional JSON-lines trace path.
        threads: Upper bound on worker threads.
    """

    instance: Instance
    source: str
    mechanism: str = "iregb"
    horizons: tuple[int, ...] = (1000,)
    replications: int = 1000
    terminal_mode: TerminalMode = EXACT
    seed: int = 0
    out: Path | None = None
    traces: Path | None = None
    threads: int = 1


def parse_generate(tokens: Sequence[str], require_k: bool = True) -> tuple[int, str, int]:
    """Parse ``K=<n> family=<name> seed=<s>`` tokens."""
    fields: dict[str, str] = {}
    for token in tokens:
        for part in token.split():
            key, sep, value = part.partition("=")
            if not sep or key not in ("K", "family", "seed"):
                raise ConfigurationError(
                    f"--generate expects K=<n> family=<name> seed=<s>, got {part!r}")
            fields[key] = value
    if require_k and "K" not in fields:
        raise ConfigurationError("--generate needs K=<n>")
    try:
        k = int(fields.get("K", "0"))
        seed = int(fields.get("seed", "0"))
    except ValueError as exc:
        raise ConfigurationError(f"--generate: {exc}") from exc
    family = fields.get("family", "discrete")
    if family not in TEMPLATES:
        raise ConfigurationError(f"unknown family {family!r}; choose from {TEMPLATES}")
    return k, family, seed


def parse_terminal_mode(text: str, seed: int = 0) -> TerminalMode:
    if text == EXACT:
        return EXACT
    kind, sep, count = text.partition(":")
    if kind != "mc" or not sep:
        raise ConfigurationError(f"--terminal-mode must be exact or mc:<n>, got {text!r}")
    try:
        samples = int(count)
    except ValueError:
        raise ConfigurationError(f"bad Monte Carlo sample count {count!r}") from None
    if samples < 1:
        raise ConfigurationError("Monte Carlo sample count must be positive")
    return MonteCarlo(samples, seed)


def parse_horizons(text: str) -> tuple[int, ...]:
    try:
        horizons = tuple(int(float(h)) for h in text.split(","))
    except ValueError:
        raise ConfigurationError(f"--horizons must be comma-separated integers, got {text!r}") from None
    if not horizons or horizons[0] < 1:
        raise ConfigurationError("horizons must be positive")
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ConfigurationError(f"horizons must be strictly increasing, got {list(horizons)}")
    return horizons


def _resolve_instance(args: argparse.Namespace) -> tuple[Instance, str]:
    chosen = [x for x in (args.instance, args.catalog, args.generate) if x]
    if len(chosen) != 1:
        raise ConfigurationError("give exactly one of --instance, --catalog or --generate")
    if args.instance:
        return load_instance(args.instance), f"file={args.instance}"
    if args.catalog:
        return catalog.by_name(args.catalog), f"catalog={args.catalog}"
    k, family, seed = parse_generate(args.generate)
    inst = generate_instance(k, family, seed)
    return inst, f"generate=K={k},family={family},seed={seed}"


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    instance, source = _resolve_instance(args)
    if args.threads < 1:
        raise ConfigurationError("--threads must be at least 1")
    if getattr(args, "replications", 2) < 2:
        raise ConfigurationError("--replications must be at least 2")
    return ExperimentConfig(
        instance=instance,
        source=source,
        mechanism=getattr(args, "mechanism", "iregb"),
        horizons=parse_horizons(args.horizons) if hasattr(args, "horizons") else (1000,),
        replications=getattr(args, "replications", 1000),
        terminal_mode=parse_terminal_mode(args.terminal_mode, args.seed),
        seed=args.seed,
        out=Path(args.out) if args.out else None,
        traces=Path(args.traces) if getattr(args, "traces", None) else None,
        threads=args.threads,
    )


def cmd_solve(config: ExperimentConfig, stdout) -> int:
    """Solve the DP, evaluate the index policy and compare them."""
    inst = config.instance
    solution = dp.solve(inst, config.terminal_mode, seed=config.seed)
    rewards = TerminalRewards(inst, config.terminal_mode)
    ogp_value = w_value(inst, ogp_policy(inst), inst.full_state, rewards)
    gap = solution.value - ogp_value
    if config.out:
        config.out.mkdir(parents=True, exist_ok=True)
        (config.out / "w_star.txt").write_text(
            f"# {config.source} seed={config.seed}\n" + solution.dumps())
    print(f"# {config.source} seed={config.seed} terminal-mode={config.terminal_mode} "
          f"threads={config.threads}", file=stdout)
    print(f"w_star = {solution.value!r}", file=stdout)
    print(f"ogp    = {ogp_value!r}", file=stdout)
    print(f"diff   = {gap!r}", file=stdout)
    if abs(gap) <= OPTIMALITY_TOLERANCE:
        print("status: OGP optimal", file=stdout)
        return EXIT_OK
    if not inst.neg_arms_ordered():
        print("status: OGP suboptimal (neg arms not ordered by stochastic dominance)", file=stdout)
    else:
        print("status: OGP suboptimal on an instance with ordered neg arms", file=stdout)
    return EXIT_VERIFICATION_FAILED


def cmd_simulate(config: ExperimentConfig, stdout) -> int:
    """Write welfare summaries for every horizon as CSV."""
    inst = config.instance
    if config.mechanism == "bic_iregb":
        validate_bic_instance(inst)
    samples = welfare_samples(inst, config.mechanism, config.horizons, config.replications,
                              config.seed)
    optimum = dp.w_star(inst) if inst.is_discrete and inst.K <= dp.MAX_DP_ARMS else None
    rows = []
    for c, T in enumerate(config.horizons):
        values = samples[:, c]
        mean = float(values.mean())
        stderr = float(values.std(ddof=1) / len(values) ** 0.5)
        bound = ""
        if config.mechanism == "iregb" and optimum is not None:
            bound = repr(convergence_bound(inst, T, optimum))
        rows.append({"instance_id": inst.name or config.source, "mechanism": config.mechanism,
                     "T": T, "replications": config.replications, "mean": repr(mean),
                     "stderr": repr(stderr), "bound": bound})
    header = f"{config.source} seed={config.seed} mechanism={config.mechanism}"
    if config.out:
        config.out.parent.mkdir(parents=True, exist_ok=True)
        with open(config.out, "w", newline="") as fh:
            write_welfare_csv(fh, rows, header)
    else:
        write_welfare_csv(stdout, rows, header)
    if config.traces:
        _write_traces(config)
    return EXIT_OK


def _write_traces(config: ExperimentConfig) -> None:
    runner = mechanism_runner(config.mechanism)
    with open(config.traces, "w") as fh:
        fh.write(json.dumps({"source": config.source, "seed": config.seed,
                             "mechanism": config.mechanism, "T": max(config.horizons)}) + "\n")
        trace = runner(config.instance, max(config.horizons), replication_rng(config.seed, 0))
        trace.write_jsonl(fh, expand=False)


def cmd_verify(suite: str, args: argparse.Namespace, stdout) -> int:
    """Run one property suite and print one line per check."""
    if suite not in verify.SUITES:
        raise ConfigurationError(f"unknown suite {suite!r}; choose from {sorted(verify.SUITES)}")
    kwargs: dict = {"seed": args.seed}
    if suite in ("equivalence", "ogp-optimality", "dominance") and args.count is not None:
        kwargs["count"] = args.count
    if suite == "ogp-optimality" and args.generate:
        _, family, _ = parse_generate(args.generate, require_k=False)
        kwargs["template"] = family
    if suite in ("mir-certificates", "bic-audit") and args.replications is not None:
        kwargs["runs" if suite == "mir-certificates" else "replications"] = args.replications
    result = verify.SUITES[suite](**kwargs)
    print(f"# suite={suite} seed={args.seed}", file=stdout)
    for line in result.lines():
        print(line, file=stdout)
    return EXIT_OK if result.passed else EXIT_VERIFICATION_FAILED


def _add_instance_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--instance", help="instance file (YAML)")
    parser.add_argument("--catalog", help=f"built-in instance: {', '.join(sorted(catalog.CATALOG))}")
    parser.add_argument("--generate", nargs="+", metavar="KEY=VALUE",
                        help="random instance: K=<n> family=<template> seed=<s>")
    parser.add_argument("--terminal-mode", default=EXACT, help="exact or mc:<samples>")


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    parser.add_argument("--threads", type=int, default=1,
                        help="upper bound on worker threads; the engines are vectorized "
                             "and single-threaded, so results never depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mirgmdp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="DP optimum versus the index policy")
    _add_instance_flags(solve)
    _add_common_flags(solve)
    solve.add_argument("--out", help="directory for the w_star table")

    sim = sub.add_parser("simulate", help="welfare of a mechanism over horizons")
    _add_instance_flags(sim)
    _add_common_flags(sim)
    sim.add_argument("--mechanism", choices=MECHANISMS, default="iregb")
    sim.add_argument("--horizons", default="1000", help="comma-separated, strictly increasing")
    sim.add_argument("--replications", type=int, default=1000)
    sim.add_argument("--out", help=f"CSV path with columns {', '.join(WELFARE_COLUMNS)}")
    sim.add_argument("--traces", help="JSON-lines trace of replication 0")

    ver = sub.add_parser("verify", help="run a property suite")
    ver.add_argument("suite", help=f"one of {', '.join(sorted(verify.SUITES))}")
    _add_common_flags(ver)
    ver.add_argument("--count", type=int, help="number of random instances")
    ver.add_argument("--replications", type=int, help="runs or audit replications")
    ver.add_argument("--generate", nargs="+", metavar="KEY=VALUE",
                     help="family=<template> for ogp-optimality")
    return parser


def main(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIGURATION_ERROR
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, args, stdout)
        config = build_config(args)
        if args.command == "solve":
            return cmd_solve(config, stdout)
        return cmd_simulate(config, stdout)
    except (ConfigurationError, MirError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_CONFIGURATION_ERROR


if __name__ == "__main__":
    sys.exit(main())
