"""Command-line entry point.

Exit codes: 0 on success, 1 on configuration errors, 2 on I/O errors.
No environment variables are consulted.
"""

from __future__ import annotations

import argparse
import sys

from .bundle import BundleError, load_bundle
from .config import ExperimentConfig
from .runner import csv_text, emit_csv, run_experiment, run_sweep
from .synth import heads_from_tensors


class _ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); config errors are exit 1
        raise _ConfigError(message)


def _ratio_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise _ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> _Parser:
    p = _Parser(
        prog="kvchannel",
        description=(
            "Run the channel-pruning pipeline on synthetic or bundled Q/K/V, "
            "compare against an uncompressed reference, and emit metric CSV."
        ),
    )
    d = ExperimentConfig()
    p.add_argument("--seq-len", type=int, default=d.seq_len, help="prefill sequence length")
    p.add_argument("--head-dim", type=int, default=d.head_dim, help="channels per head")
    p.add_argument("--heads", type=int, default=d.heads, help="number of attention heads")
    p.add_argument("--window", type=int, default=d.window, help="observation window length")
    p.add_argument("--decode-steps", type=int, default=d.decode_steps, help="decode loop length")
    p.add_argument("--lambda-k", type=float, default=d.lambda_k, help="key-channel pruning ratio")
    p.add_argument("--lambda-v", type=float, default=d.lambda_v, help="value-channel pruning ratio")
    p.add_argument("--strategy", choices=("fixed", "top_p", "grouped"), default=d.strategy)
    p.add_argument("--top-p", type=float, default=d.top_p, help="top_p saliency coverage")
    p.add_argument("--groups", type=int, default=d.groups, help="grouped-strategy segment count")
    p.add_argument(
        "--group-ratios",
        type=_ratio_list,
        default=d.group_ratios,
        help="comma-separated per-group pruning ratios, most-salient group first",
    )
    p.add_argument("--dist", choices=("normal", "exponential", "degenerate"), default=d.dist)
    p.add_argument("--eviction", choices=("none", "snapkv", "streaming"), default=d.eviction)
    p.add_argument("--kv-budget", type=int, default=d.kv_budget, help="tokens kept by eviction (0 = all)")
    p.add_argument("--pool-kernel", type=int, default=d.pool_kernel, help="snapkv max-pool width (odd)")
    p.add_argument("--sinks", type=int, default=d.sinks, help="streaming: leading tokens kept")
    p.add_argument("--recent", type=int, default=d.recent, help="streaming: trailing tokens kept")
    p.add_argument("--accounting", choices=("values_only", "with_overhead"), default=d.accounting)
    p.add_argument("--elem-bytes", type=int, default=d.elem_bytes, help="bytes per cache element")
    p.add_argument("--index-bytes", type=int, default=d.index_bytes, help="bytes per channel index")
    p.add_argument("--epsilon", type=float, default=d.epsilon, help="recovery division clamp")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--input", default=None, help="tensor bundle to load instead of synthesizing")
    p.add_argument("--output", default=None, help="CSV path (stdout when omitted)")
    p.add_argument("--sweep", type=_ratio_list, default=None, help="comma-separated lambda-k list")
    return p


def _config_from_args(args) -> ExperimentConfig:
    return ExperimentConfig(
        seq_len=args.seq_len,
        head_dim=args.head_dim,
        heads=args.heads,
        window=args.window,
        decode_steps=args.decode_steps,
        lambda_k=args.lambda_k,
        lambda_v=args.lambda_v,
        strategy=args.strategy,
        top_p=args.top_p,
        groups=args.groups,
        group_ratios=tuple(args.group_ratios),
        dist=args.dist,
        eviction=args.eviction,
        kv_budget=args.kv_budget,
        pool_kernel=args.pool_kernel,
        sinks=args.sinks,
        recent=args.recent,
        accounting=args.accounting,
        elem_bytes=args.elem_bytes,
        index_bytes=args.index_bytes,
        epsilon=args.epsilon,
        seed=args.seed,
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _config_from_args(args)
    except _ConfigError as exc:
        print(f"kvchannel: {exc}", file=sys.stderr)
        return 1

    heads = None
    if args.input is not None:
        try:
            tensors = load_bundle(args.input)
        except (BundleError, OSError) as exc:
            print(f"kvchannel: {exc}", file=sys.stderr)
            return 2
        try:
            heads = heads_from_tensors(tensors)
            first = heads[0]
            config = config.replace(
                seq_len=first.K.shape[0],
                head_dim=first.K.shape[1],
                heads=len(heads),
                window=first.q_window.shape[0],
                decode_steps=first.decode_q.shape[0],
            )
        except ValueError as exc:
            print(f"kvchannel: {exc}", file=sys.stderr)
            return 1

    try:
        if args.sweep is not None:
            if heads is not None:
                rows = [run_experiment(config.replace(lambda_k=lam), heads) for lam in args.sweep]
            else:
                rows = run_sweep(config, args.sweep)
        else:
            rows = [run_experiment(config, heads)]
    except ValueError as exc:
        print(f"kvchannel: {exc}", file=sys.stderr)
        return 1

    for row in rows:
        print(f"# wall_time_ms={row.wall_time_ms:.3f}", file=sys.stderr)

    if args.output is None:
        sys.stdout.write(csv_text(rows))
        return 0
    try:
        emit_csv(rows, args.output)
    except OSError as exc:
        print(f"kvchannel: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
