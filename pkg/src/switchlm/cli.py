"""Command-line interface.

One subcommand per pipeline stage plus `serve` (gateway or raw backend) and
`generate` (one-shot query, in-process or against a running gateway).

Exit codes: 0 success, 2 for usage problems (bad flags, missing files,
malformed configs), 1 for runtime failures. Failures print a single
machine-readable JSON line to stderr: {"error": <type>, "message": <text>}.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .domains import DOMAIN_NAMES
from .experiment import (
    ExperimentError,
    Workdir,
    load_experiment_config,
    stage_collect_queries,
    stage_evaluate,
    stage_latency,
    stage_sweep,
    stage_synth_data,
    stage_train_backbone,
    stage_train_head,
    stage_finetune_expert,
)
from .gateway import Gateway, GatewayClient, GatewayServer, load_gateway_config
from .head import extend_head, load_head, save_head

USAGE_EXIT = 2
RUNTIME_EXIT = 1

# Problems with what the user asked for, as opposed to failures while doing it.
_USAGE_ERRORS = (ExperimentError, FileNotFoundError, json.JSONDecodeError)


def _error_line(exc: BaseException) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def _add_pipeline_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default="configs/benchmark.json", help="experiment config JSON")
    sub.add_argument("--workdir", default="runs/benchmark", help="artifact directory")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")


def _pipeline_context(args):
    path = Path(args.config)
    if not path.exists():
        raise ExperimentError(f"config file not found: {path}")
    cfg = load_experiment_config(path, seed_override=args.seed)
    return cfg, Workdir(args.workdir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchlm",
        description="Token-routed model switching: data, training, routing head, serving.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("synth-data", help="generate domain corpora, filler, and splits")
    _add_pipeline_args(sub)

    sub = subs.add_parser("train-backbone", help="train the shared meta model")
    _add_pipeline_args(sub)

    sub = subs.add_parser("finetune-expert", help="fine-tune one expert (or all) from the meta model")
    _add_pipeline_args(sub)
    sub.add_argument("--domain", default="all", help="domain name, or 'all'")

    sub = subs.add_parser("collect-queries", help="select expert training queries by loss gap")
    _add_pipeline_args(sub)
    sub.add_argument("--tau", type=float, default=None, help="override the loss-gap threshold")
    sub.add_argument("--cap", type=int, default=None, help="override the per-expert cap")

    sub = subs.add_parser("train-head", help="train expert-token rows on collected queries")
    _add_pipeline_args(sub)
    sub.add_argument("--out", default=None, help="write the head file here instead of the workdir")

    sub = subs.add_parser("extend-head", help="append experts from other head files to a base head")
    sub.add_argument("--head", required=True, help="base head file")
    sub.add_argument("--add", nargs="+", required=True, help="head files whose experts to append")
    sub.add_argument("--out", required=True, help="output head file")

    sub = subs.add_parser("evaluate", help="accuracy, routing matrix, and baselines")
    _add_pipeline_args(sub)
    sub.add_argument("--mode", choices=["experts-only", "full-vocab"], default=None)
    sub.add_argument("--head-file", default=None, help="evaluate this head instead of the workdir's")

    sub = subs.add_parser("sweep", help="routing quality vs queries per expert, across seeds")
    _add_pipeline_args(sub)

    sub = subs.add_parser("latency", help="switching overhead on length-matched generations")
    _add_pipeline_args(sub)
    sub.add_argument("--repetitions", type=int, default=None)

    sub = subs.add_parser("serve", help="run the gateway, or a single raw backend")
    sub.add_argument("--gateway-config", default=None, help="gateway JSON config")
    sub.add_argument("--backend-checkpoint", default=None, help="serve one model directly")
    sub.add_argument("--vocab", default=None, help="vocabulary for --backend-checkpoint")
    sub.add_argument("--name", default="backend", help="backend name for --backend-checkpoint")
    sub.add_argument("--listen", default=None, help="host:port (overrides config and environment)")

    sub = subs.add_parser("generate", help="answer one query and print the response")
    sub.add_argument("--query", required=True)
    sub.add_argument("--max-new-tokens", type=int, default=None)
    sub.add_argument("--trace", action="store_true", help="print the full trace JSON instead")
    sub.add_argument("--gateway", default=None, help="host:port of a running gateway")
    sub.add_argument("--config", default="configs/benchmark.json")
    sub.add_argument("--workdir", default="runs/benchmark")
    sub.add_argument("--seed", type=int, default=None, help="accepted for uniformity; unused")
    return parser


def _cmd_finetune(args) -> None:
    cfg, wd = _pipeline_context(args)
    names = DOMAIN_NAMES if args.domain == "all" else (args.domain,)
    for name in names:
        curve = stage_finetune_expert(cfg, wd, name)
        print(f"expert {name}: final loss/token {curve[-1]:.4f}")


def _cmd_collect(args) -> None:
    from dataclasses import replace

    cfg, wd = _pipeline_context(args)
    coll = cfg.collector
    if args.tau is not None:
        coll = replace(coll, tau=args.tau)
    if args.cap is not None:
        coll = replace(coll, per_expert_cap=args.cap)
    cfg = replace(cfg, collector=coll)
    report = stage_collect_queries(cfg, wd)
    for entry in report["experts"]:
        print(f"expert {entry['name']}: qualifying {entry['qualifying']}, kept {entry['kept']}")


def _cmd_extend_head(args) -> None:
    base = load_head(Path(args.head))
    additions = [load_head(Path(p)) for p in args.add]
    merged = extend_head(base, additions)
    save_head(merged, Path(args.out))
    print(f"wrote {args.out}: {merged.n_experts} experts ({', '.join(merged.names())})")


def _cmd_serve(args) -> None:
    if (args.gateway_config is None) == (args.backend_checkpoint is None):
        raise ExperimentError("serve needs exactly one of --gateway-config or --backend-checkpoint")
    if args.gateway_config is not None:
        cfg = load_gateway_config(Path(args.gateway_config))
        if args.listen is not None:
            from dataclasses import replace

            cfg = replace(cfg, listen=args.listen)
        gateway = Gateway.start(cfg)
        server = GatewayServer(gateway)
        print(f"gateway listening on {server.address}", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.shutdown()
            gateway.close()
        return
    if args.vocab is None:
        raise ExperimentError("--backend-checkpoint requires --vocab")
    from . import backbone as bb
    from .vocab import Vocabulary
    from .wire import serve_backend

    model = bb.load_checkpoint(Path(args.backend_checkpoint), Vocabulary.load(Path(args.vocab)))
    listen = args.listen or "127.0.0.1:0"
    host, _, port = listen.partition(":")
    server = serve_backend(model, args.name, host, int(port or 0))
    print(f"backend {args.name!r} listening on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()


def _cmd_generate(args) -> None:
    if args.gateway is not None:
        client = GatewayClient(args.gateway)
        try:
            result = client.chat_generate(args.query, max_new_tokens=args.max_new_tokens)
        finally:
            client.close()
        if args.trace:
            print(json.dumps(result, indent=2))
        else:
            print(result["response"])
        return

    from .evaluation import make_responder
    from .experiment import _backends, _load_models
    from .head import load_head as _load_head
    from .orchestrator import Limits, trace_record

    cfg, wd = _pipeline_context(args)
    vocab, meta, experts = _load_models(cfg, wd)
    if not wd.head.exists():
        raise ExperimentError(f"missing {wd.head}; run train-head first")
    head = _load_head(wd.head)
    meta_backend, expert_backends = _backends(meta, experts)
    limits = Limits() if args.max_new_tokens is None else Limits(max_new_tokens=args.max_new_tokens)
    from .orchestrator import generate as orchestrate

    result = orchestrate(args.query, meta_backend, head, expert_backends, vocab, limits)
    if args.trace:
        print(json.dumps(trace_record(result), indent=2))
    else:
        print(result.response)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth-data":
            cfg, wd = _pipeline_context(args)
            prov = stage_synth_data(cfg, wd)
            for name, info in prov["domains"].items():
                print(f"{name}: train {info['train']}, test {info['test']}, pool {info['pool']}, "
                      f"filtered {prov['filtered_out'][name]}")
        elif args.command == "train-backbone":
            cfg, wd = _pipeline_context(args)
            curve = stage_train_backbone(cfg, wd)
            print(f"meta model: final loss/token {curve[-1]:.4f}")
        elif args.command == "finetune-expert":
            _cmd_finetune(args)
        elif args.command == "collect-queries":
            _cmd_collect(args)
        elif args.command == "train-head":
            cfg, wd = _pipeline_context(args)
            out = Path(args.out) if args.out else None
            curve = stage_train_head(cfg, wd, out)
            print(f"head: final loss {curve[-1]:.4f}")
        elif args.command == "extend-head":
            _cmd_extend_head(args)
        elif args.command == "evaluate":
            from dataclasses import replace

            cfg, wd = _pipeline_context(args)
            if args.mode is not None:
                cfg = replace(cfg, routing_mode=args.mode)
            head_path = Path(args.head_file) if args.head_file else None
            report = stage_evaluate(cfg, wd, head_path)
            print(f"routing accuracy: {report['routing']['accuracy']:.4f} "
                  f"(random {report['routing']['random_baseline']:.4f})")
            print(f"overall accuracy: {report['overall']['routed']['overall']:.4f} routed, "
                  f"{report['overall']['meta_only']['overall']:.4f} unrouted")
        elif args.command == "sweep":
            cfg, wd = _pipeline_context(args)
            report = stage_sweep(cfg, wd)
            for size in report["sizes"]:
                entry = report["per_size"][size]
                print(f"size {size}: routing {entry['routing']['mean']:.4f} "
                      f"+/- {entry['routing']['spread']:.4f}")
        elif args.command == "latency":
            from dataclasses import replace

            cfg, wd = _pipeline_context(args)
            if args.repetitions is not None:
                cfg = replace(cfg, timing_repetitions=args.repetitions)
            report = stage_latency(cfg, wd)
            print(f"no-switch {report['no_switch_mean_s']:.4f}s, "
                  f"switch {report['switch_mean_s']:.4f}s, "
                  f"overhead {report['overhead_pct']:+.2f}%")
        elif args.command == "serve":
            _cmd_serve(args)
        elif args.command == "generate":
            _cmd_generate(args)
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command!r}")
    except _USAGE_ERRORS as exc:
        _error_line(exc)
        return USAGE_EXIT
    except KeyboardInterrupt:
        return RUNTIME_EXIT
    except Exception as exc:
        _error_line(exc)
        return RUNTIME_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
