"""Command-line front end for the simulation and evaluation pipeline.

Exit codes: 0 success, 2 missing input, 3 empty or degenerate data,
4 numerical failure.  Fatal errors print one machine-readable JSON
object to stderr: {"error": {"kind": ..., "message": ...}}.  All file
outputs are deterministic functions of config and seed; --threads only
changes how fast they appear.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .demo import write_demo_workspace
from .errors import DegenerateDataError, EngineError, NumericalError
from .geometry import SceneError
from .kernels import backend
from .manifest import ManifestError
from .pipeline import (
    ENGINES,
    MissingInputError,
    cmd_compare,
    cmd_convolve,
    cmd_dereverb,
    cmd_evaluate,
    cmd_grid,
    cmd_report,
    cmd_simulate,
    load_pipeline_config,
)
from .version import __version__

EXIT_OK = 0
EXIT_MISSING_INPUT = 2
EXIT_DEGENERATE = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="roomsim",
        description="Room-acoustics simulation and evaluation pipeline",
    )
    p.add_argument(
        "--version", action="version", version=f"roomsim {__version__}"
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument(
                "--config", required=True, help="pipeline config JSON"
            )
            sp.add_argument(
                "--seed", type=int, default=None,
                help="override the config seed",
            )
        sp.add_argument(
            "--threads", type=int, default=None,
            help="worker threads (speed only, never results)",
        )

    sp = sub.add_parser("simulate", help="render RIRs for one engine")
    common(sp)
    sp.add_argument("--engine", required=True, choices=ENGINES)
    sp.add_argument(
        "--out", default=None,
        help="workspace directory for rirs/ and manifest "
        "(default: config directory)",
    )

    sp = sub.add_parser(
        "convolve", help="write wet audio for every manifest entry"
    )
    common(sp)
    sp.add_argument("--engine", default=None, choices=ENGINES)
    sp.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser(
        "dereverb", help="write WPE-processed audio per evaluation group"
    )
    common(sp)
    sp.add_argument("--engine", default=None, choices=ENGINES)
    sp.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser(
        "evaluate", help="dereverberate and score, or ingest external scores"
    )
    common(sp)
    sp.add_argument("--engine", default=None, choices=ENGINES)
    sp.add_argument("--out", default=None, help="results CSV path")
    sp.add_argument(
        "--include-unprocessed", action="store_true",
        help="also score the raw first channel (algorithm 'input')",
    )
    sp.add_argument(
        "--self-check", action="store_true",
        help="score references against themselves instead of running WPE",
    )
    sp.add_argument(
        "--external", default=None,
        help="ingest an external score CSV instead of running WPE",
    )
    sp.add_argument(
        "--metric", default=None,
        help="metric name declared by the external score file",
    )

    sp = sub.add_parser(
        "compare", help="agreement report of candidates against a reference"
    )
    sp.add_argument("reference", help="reference results CSV")
    sp.add_argument("candidates", nargs="+", help="candidate results CSVs")
    sp.add_argument("--out", default="report", help="report directory")
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument(
        "--pool", dest="pool", action="store_true", default=True,
        help="pool all rooms into one row per cell (default)",
    )
    mode.add_argument(
        "--per-dataset", dest="pool", action="store_false",
        help="one row per room instead of pooling",
    )
    sp.add_argument(
        "--svg", action="store_true", help="also render scatter SVGs"
    )
    common(sp, config=False)

    sp = sub.add_parser("report", help="print a stored report JSON as text")
    sp.add_argument("report_json", help="path to report.json")

    sp = sub.add_parser(
        "gen-demo", help="write a self-contained demo workspace"
    )
    sp.add_argument("--out", default="demo", help="workspace directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-utterances", type=int, default=20)
    sp.add_argument("--n-receivers", type=int, default=10)
    sp.add_argument("--utterance-seconds", type=float, default=2.0)

    sp = sub.add_parser("grid", help="receiver grid positions for a scene")
    sp.add_argument("--scene", required=True, help="scene JSON")
    sp.add_argument("--spacing", type=float, required=True)
    sp.add_argument("--height", type=float, default=1.2)
    sp.add_argument("--out", default=None, help="output JSON (else stdout)")

    return p


def _config_and_base(args):
    config = load_pipeline_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    base = os.path.dirname(os.path.abspath(args.config))
    return config, base


def _dispatch(args) -> int:
    if args.command == "simulate":
        config, base = _config_and_base(args)
        summary = cmd_simulate(
            config, args.engine, base, out_dir=args.out
        )
        for w in summary["warnings"]:
            print(f"warning: {w}", file=sys.stderr)
        print(
            f"wrote {summary['n_rirs']} {summary['engine']} RIRs; "
            f"manifest {summary['manifest']}"
        )
        return EXIT_OK

    if args.command == "convolve":
        config, base = _config_and_base(args)
        summary = cmd_convolve(
            config, base, out_dir=args.out or base, engine=args.engine
        )
        print(f"wrote {summary['n_files']} wet files")
        return EXIT_OK

    if args.command == "dereverb":
        config, base = _config_and_base(args)
        summary = cmd_dereverb(
            config, base, out_dir=args.out or base, engine=args.engine
        )
        print(f"wrote {summary['n_files']} processed files")
        return EXIT_OK

    if args.command == "evaluate":
        config, base = _config_and_base(args)
        out_csv = args.out or os.path.join(
            base, "results", f"{args.engine or 'all'}.csv"
        )
        summary = cmd_evaluate(
            config,
            base,
            out_csv,
            engine=args.engine,
            include_unprocessed=args.include_unprocessed,
            self_check=args.self_check,
            external=args.external,
            external_metric=args.metric,
        )
        print(f"wrote {summary['n_rows']} result rows to {summary['path']}")
        return EXIT_OK

    if args.command == "compare":
        summary = cmd_compare(
            args.reference,
            args.candidates,
            out_dir=args.out,
            pool=args.pool,
            svg=args.svg,
        )
        print(summary["text"])
        return EXIT_OK

    if args.command == "report":
        print(cmd_report(args.report_json))
        return EXIT_OK

    if args.command == "gen-demo":
        paths = write_demo_workspace(
            args.out,
            seed=args.seed,
            n_utterances=args.n_utterances,
            n_receivers=args.n_receivers,
            utterance_seconds=args.utterance_seconds,
        )
        print(f"demo workspace ready: {paths['config']}")
        return EXIT_OK

    if args.command == "grid":
        data = cmd_grid(args.scene, args.spacing, args.height)
        text = json.dumps(data, indent=2, sort_keys=True)
        if args.out:
            with open(args.out, "w") as f:
                f.write(text + "\n")
            print(f"wrote {data['n']} positions to {args.out}")
        else:
            print(text)
        return EXIT_OK

    raise ValueError(f"unknown command {args.command!r}")


def _fail(kind: str, message: str, code: int) -> int:
    json.dump({"error": {"kind": kind, "message": message}}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads is not None:
        backend.set_threads(threads)
    try:
        return _dispatch(args)
    except MissingInputError as e:
        return _fail(e.kind, str(e), EXIT_MISSING_INPUT)
    except FileNotFoundError as e:
        return _fail("input_not_found", str(e), EXIT_MISSING_INPUT)
    except DegenerateDataError as e:
        return _fail("degenerate_data", str(e), EXIT_DEGENERATE)
    except ManifestError as e:
        return _fail("manifest_error", str(e), EXIT_DEGENERATE)
    except SceneError as e:
        return _fail("scene_error", str(e), EXIT_DEGENERATE)
    except ValueError as e:
        return _fail("invalid_value", str(e), EXIT_DEGENERATE)
    except EngineError as e:
        # incompatibilities (e.g. ISM with boxes) pass through verbatim
        return _fail("engine_error", str(e), EXIT_NUMERICAL)
    except (NumericalError, FloatingPointError) as e:
        return _fail("numerical_failure", str(e), EXIT_NUMERICAL)


if __name__ == "__main__":
    sys.exit(main())
