"""Command-line entry point.

Subcommands: attack, detect, eval, poison, theory, sweep, import.  Every
ExperimentConfig field can be overridden with a dotted flag, e.g.

    pta eval --config exp.json --attack.alpha=0.4 --evaluation.n_c 25

Precedence: config file < PTA_SEED environment variable < explicit flags.
Exit codes: 0 success, 1 validation error, 2 runtime/numeric error,
3 theorem violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import (
    BoundViolationError,
    NumericError,
    ParseError,
    PtaError,
    ValidationError,
)
from .experiment import (
    apply_overrides,
    build_world,
    config_from_dict,
    craft_attack,
    run_experiment,
    run_theory_suite,
)
from .rng import hash64
from .synthworld import read_embedding_csv, write_embedding_csv

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_THEOREM = 3


def _base_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", help="JSON config file (ExperimentConfig schema)")
    p.add_argument("--output", help="output directory (overrides config output_dir)")
    p.add_argument("--seed", type=int, help="master seed (overrides config and PTA_SEED)")
    p.add_argument("--trials", type=int, help="number of trials")
    p.add_argument("--jobs", type=int, help="concurrent trial limit")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    return p


def _collect_overrides(extras: list[str]) -> dict[str, str]:
    """Parse leftover ``--a.b.c=value`` / ``--a.b.c value`` tokens."""
    overrides: dict[str, str] = {}
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--"):
            raise ValidationError([f"unrecognized argument {token!r}"])
        body = token[2:]
        if "=" in body:
            path, value = body.split("=", 1)
            i += 1
        else:
            path = body
            if i + 1 >= len(extras):
                raise ValidationError([f"flag --{path} is missing a value"])
            value = extras[i + 1]
            i += 2
        if "." not in path:
            raise ValidationError([f"unknown flag --{path}; dotted config paths only"])
        overrides[path] = value
    return overrides


def _load_config(args, extras, forced: dict | None = None):
    doc = {}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ValidationError([f"config file not found: {args.config}"]) from None
        except json.JSONDecodeError as exc:
            raise ValidationError([f"config file is not valid JSON: {exc}"]) from None
    doc = apply_overrides(doc, _collect_overrides(extras))
    if os.environ.get("PTA_SEED") is not None:
        try:
            doc["seed"] = int(os.environ["PTA_SEED"])
        except ValueError:
            raise ValidationError(["PTA_SEED must be an integer"]) from None
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.output is not None:
        doc["output_dir"] = args.output
    if args.trials is not None:
        doc["trials"] = args.trials
    if args.jobs is not None:
        doc["jobs"] = args.jobs
    if args.no_figures:
        doc["figures"] = False
    if forced:
        for path, value in forced.items():
            node = doc
            parts = path.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
    return config_from_dict(doc)


def _cmd_eval(args, extras) -> int:
    cfg = _load_config(args, extras)
    if cfg.evaluation.task not in ("classification", "retrieval"):
        raise ValidationError(
            ["eval runs task classification or retrieval; use `pta poison` for poisoning"]
        )
    manifest = run_experiment(cfg)
    print(f"wrote {len(manifest.emitted_files)} files to {cfg.output_dir}")
    return EXIT_OK


def _cmd_poison(args, extras) -> int:
    cfg = _load_config(args, extras, forced={"evaluation.task": "poisoning"})
    manifest = run_experiment(cfg)
    print(f"wrote {len(manifest.emitted_files)} files to {cfg.output_dir}")
    return EXIT_OK


def _cmd_sweep(args, extras) -> int:
    cfg = _load_config(args, extras)
    if cfg.sweep is None:
        raise ValidationError(["sweep requires a sweep section (sweep.parameter, sweep.values)"])
    manifest = run_experiment(cfg)
    print(f"wrote {len(manifest.emitted_files)} files to {cfg.output_dir}")
    return EXIT_OK


def _cmd_attack(args, extras) -> int:
    from . import report

    cfg = _load_config(args, extras)
    trial_seed = hash64(cfg.seed, 0)
    world = build_world(cfg.world, trial_seed)
    os.makedirs(cfg.output_dir, exist_ok=True)
    docs, traces = [], {}
    for method in cfg.evaluation.attacks:
        for t in range(world.n_clusters):
            from dataclasses import replace

            run_cfg = replace(
                cfg.attack,
                alpha=cfg.attack.alpha if method == "pta" else 0.0,
                seed=hash64(trial_seed, "attack", method, t),
            )
            n_c = 1 if method == "illusion" else cfg.evaluation.n_c
            base = world.source_inputs[t][-1]
            result = craft_attack(world, method, t, base, run_cfg, n_c, cfg.evaluation.n_s)
            residual = float(np.max(np.abs(result.adversarial_input - base)))
            docs.append(
                {
                    "attack": method,
                    "target_cluster": world.clusters[t].label,
                    "max_abs_perturbation": residual,
                    "within_budget": residual <= run_cfg.epsilon + 1e-9,
                    "result": json.loads(result.to_json()),
                }
            )
            traces[f"{method}/c{t}"] = list(result.loss_trace)
    out = os.path.join(cfg.output_dir, "attack_results.json")
    with open(out, "w") as fh:
        json.dump(docs, fh, indent=2)
    emitted = [out]
    if cfg.figures:
        fig = os.path.join(cfg.output_dir, "attack_traces.png")
        report.render_trace_figure(traces, fig)
        emitted.append(fig)
    print(f"wrote {', '.join(os.path.basename(p) for p in emitted)} to {cfg.output_dir}")
    return EXIT_OK


def _cmd_detect(args, extras) -> int:
    from . import report
    from .detect import filter_outliers, score_set

    cfg = _load_config(args, extras)
    if not args.input:
        raise ValidationError(["detect requires --input <embeddings.csv>"])
    embeddings = read_embedding_csv(args.input, normalize=args.normalize)
    scores = score_set(embeddings.vectors, cfg.detection)
    result = filter_outliers(scores, cfg.detection.anomaly_ratio_r)
    emitted = report.emit_detection(cfg.output_dir, result, figures=cfg.figures)
    print(
        f"scored {len(embeddings)} embeddings with {cfg.detection.method}; "
        f"flagged {result.flagged_count}; wrote {', '.join(os.path.basename(p) for p in emitted)}"
    )
    return EXIT_OK


def _cmd_theory(args, extras) -> int:
    cfg = _load_config(args, extras)
    manifest = run_theory_suite(
        output_dir=cfg.output_dir,
        seed=cfg.seed,
        instance_count=args.instances,
        bound_triples=args.triples,
        tol=args.tol,
        figures=cfg.figures,
    )
    print(f"theory suite clean; wrote {len(manifest.emitted_files)} files to {cfg.output_dir}")
    return EXIT_OK


def _cmd_import(args, extras) -> int:
    if args.role not in ("source", "target", "reference"):
        raise ValidationError([f"role must be source|target|reference, got {args.role!r}"])
    embeddings = read_embedding_csv(args.input, normalize=args.normalize)
    outdir = args.output or "."
    os.makedirs(outdir, exist_ok=True)
    copy_path = os.path.join(outdir, f"embeddings_{args.role}.csv")
    write_embedding_csv(copy_path, embeddings)
    tags = sorted(set(embeddings.member_labels))
    summary = {
        "role": args.role,
        "rows": len(embeddings),
        "dimension": embeddings.dim,
        "tags": tags,
        "normalized": bool(args.normalize),
        "file": os.path.basename(copy_path),
    }
    summary_path = os.path.join(outdir, "import_summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"imported {len(embeddings)} embeddings ({len(tags)} tags) as role {args.role}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pta",
        description="Proxy-targeted attacks on cross-modal embedding alignment",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _base_parser(sub, "attack", "craft adversarial examples and dump traces")
    d = _base_parser(sub, "detect", "score an embedding file for anomalies")
    d.add_argument("--input", help="embedding CSV (tag, coord, coord, ...)")
    d.add_argument("--normalize", action="store_true", help="unit-normalize rows on load")
    _base_parser(sub, "eval", "attack -> detect -> metrics pipeline")
    _base_parser(sub, "poison", "gallery-poisoning degradation experiment")
    t = _base_parser(sub, "theory", "verify the analytical claims numerically")
    t.add_argument("--instances", type=int, default=200, help="trade-off instances")
    t.add_argument("--triples", type=int, default=500, help="hull triples per theorem")
    t.add_argument("--tol", type=float, default=1e-4, help="closed-form/oracle tolerance")
    _base_parser(sub, "sweep", "run the configured parameter sweep")
    i = _base_parser(sub, "import", "validate and register an embedding file")
    i.add_argument("--input", required=True, help="embedding CSV to import")
    i.add_argument(
        "--role", required=True, help="what the embeddings stand for: source|target|reference"
    )
    i.add_argument("--normalize", action="store_true", help="unit-normalize rows on load")
    return parser


COMMANDS = {
    "attack": _cmd_attack,
    "detect": _cmd_detect,
    "eval": _cmd_eval,
    "poison": _cmd_poison,
    "theory": _cmd_theory,
    "sweep": _cmd_sweep,
    "import": _cmd_import,
}


def main(argv=None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return COMMANDS[args.command](args, extras)
    except BoundViolationError as exc:
        print(f"theorem violation: {exc}", file=sys.stderr)
        return EXIT_THEOREM
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ParseError, PtaError) as exc:
        if isinstance(exc, NumericError):
            print(f"numeric error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
