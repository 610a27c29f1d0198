"""
Main Entry Point for BC Streams

Command-line interface wiring corpus ingestion, stream detection,
partition comparison and scenario synthesis into reproducible runs with
file-based outputs.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import __version__
from .algorithms import ALGORITHMS, AlgorithmConfig, detect
from .compare import compare_many, load_stream_partition
from .corpus import (
    CORPUS_FORMATS,
    BCStreamsError,
    DataValidationError,
    ExportError,
    RecordParseError,
    load_corpus,
)
from .matching import DEFAULT_THETA, SIMILARITIES
from .reporting import ExportManager, file_digest, write_json
from .synth import generate, load_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2


def setup_logging(log_dir: str = "logs", verbose: bool = False):
    """Setup application logging"""
    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)

    log_file = log_path / f"bc_streams_{datetime.now().strftime('%Y%m%d')}.log"

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.FileHandler(log_file), logging.StreamHandler(sys.stdout)],
        force=True,
    )

    return logging.getLogger(__name__)


@dataclass
class RunManifest:
    """Everything needed to reproduce a run"""

    command: str
    config: Dict[str, Any]
    inputs: Dict[str, str]
    version: str = __version__
    base_seed: Optional[int] = None
    options: Dict[str, Any] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "version": self.version,
            "base_seed": self.base_seed,
            "options": self.options,
            "outputs": self.outputs,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        try:
            return cls(
                command=data["command"],
                config=dict(data["config"]),
                inputs=dict(data["inputs"]),
                version=data.get("version", "unknown"),
                base_seed=data.get("base_seed"),
                options=dict(data.get("options", {})),
                outputs=list(data.get("outputs", [])),
            )
        except (KeyError, TypeError) as e:
            raise DataValidationError(f"invalid manifest: missing {e}")

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls.from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise RecordParseError(f"invalid JSON ({e.msg})", e.lineno, str(path))

    def verify_inputs(self):
        """Refuse to reproduce a run whose inputs changed on disk"""
        for path, digest in self.inputs.items():
            if not Path(path).exists():
                raise DataValidationError(f"input '{path}' of the manifest is missing")
            if file_digest(path) != digest:
                raise DataValidationError(
                    f"input '{path}' changed since the manifest was written"
                )


def _write_manifest(exporter: ExportManager, manifest: RunManifest):
    manifest.outputs = sorted(set(exporter.written))
    write_json(exporter.out_dir / "manifest.json", manifest.to_dict())


def _run_detection(
    corpus_path: Path,
    fmt: str,
    config: AlgorithmConfig,
    out_dir: Path,
    min_stream_size: Optional[int],
):
    corpus = load_corpus(corpus_path, fmt)
    result = detect(corpus, config)

    exporter = ExportManager(out_dir)
    exporter.export_detection(
        result.streams,
        result.report.to_dict(),
        corpus,
        partitions=result.partitions,
        min_stream_size=min_stream_size,
    )
    manifest = RunManifest(
        command="detect",
        config=config.to_dict(),
        inputs={str(corpus_path.resolve()): file_digest(corpus_path)},
        base_seed=config.base_seed,
        options={"format": fmt, "min_stream_size": min_stream_size},
    )
    _write_manifest(exporter, manifest)
    logger.info(f"Wrote {len(result.streams)} streams to {out_dir}")


def cmd_detect(args: argparse.Namespace) -> int:
    config = AlgorithmConfig(
        algorithm=args.algorithm,
        delta_t=args.window,
        n_runs=args.runs,
        base_seed=args.seed,
        theta=args.theta,
        min_shared_refs=args.min_shared_refs,
        similarity=args.similarity,
        workers=args.workers,
    )
    config.validate()
    _run_detection(
        Path(args.corpus), args.format, config, Path(args.out), args.min_stream_size
    )
    return EXIT_OK


def cmd_rerun(args: argparse.Namespace) -> int:
    manifest = RunManifest.load(Path(args.manifest))
    if manifest.command != "detect":
        raise DataValidationError(
            f"only detect runs can be reproduced, manifest is for '{manifest.command}'"
        )
    manifest.verify_inputs()
    config = AlgorithmConfig.from_dict(manifest.config)
    (corpus_path,) = manifest.inputs
    _run_detection(
        Path(corpus_path),
        manifest.options.get("format", "jsonl"),
        config,
        Path(args.out),
        manifest.options.get("min_stream_size"),
    )
    return EXIT_OK


def _partition_names(paths: List[Path]) -> List[str]:
    names = []
    for path in paths:
        name = path.parent.name if path.stem in ("streams", "membership") else path.stem
        name = name or path.stem
        candidate, n = name, 2
        while candidate in names:
            candidate, n = f"{name}_{n}", n + 1
        names.append(candidate)
    return names


def cmd_compare(args: argparse.Namespace) -> int:
    paths = [Path(p) for p in args.partitions]
    names = args.names or _partition_names(paths)
    if len(names) != len(paths):
        raise DataValidationError(
            f"{len(names)} names given for {len(paths)} partitions"
        )

    partitions = {
        name: load_stream_partition(path, name) for name, path in zip(names, paths)
    }
    reports = compare_many(partitions)

    exporter = ExportManager(Path(args.out))
    exporter.export_comparison(reports, excel=args.excel, pdf=args.pdf)
    manifest = RunManifest(
        command="compare",
        config={"names": names},
        inputs={str(path.resolve()): file_digest(path) for path in paths},
        options={"excel": args.excel, "pdf": args.pdf},
    )
    _write_manifest(exporter, manifest)
    for report in reports:
        logger.info(
            f"{report.x} vs {report.y}: NMI={report.nmi}, "
            f"NMI_X={report.nmi_x}, NMI_Y={report.nmi_y}"
        )
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    corpus, truth = generate(scenario)

    exporter = ExportManager(Path(args.out))
    exporter.export_corpus(corpus, args.format)
    exporter.export_json(truth.to_dict(), "ground_truth.json")
    scenario_path = Path(args.scenario)
    manifest = RunManifest(
        command="synth",
        config=scenario.to_dict(),
        inputs=(
            {str(scenario_path.resolve()): file_digest(scenario_path)}
            if scenario_path.exists()
            else {}
        ),
        base_seed=scenario.seed,
        options={"format": args.format},
    )
    _write_manifest(exporter, manifest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bc-streams",
        description="Historical streams in bibliographic-coupling networks",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    parser.add_argument("--log-dir", default="logs", help="directory for log files")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    detect_parser = subparsers.add_parser("detect", help="detect streams in a corpus")
    detect_parser.add_argument("corpus", help="corpus file")
    detect_parser.add_argument("--algorithm", choices=ALGORITHMS, default="bclc")
    detect_parser.add_argument("--window", type=int, default=5, help="years per window")
    detect_parser.add_argument("--runs", type=int, default=100, help="Louvain runs N")
    detect_parser.add_argument("--seed", type=int, default=0, help="base seed")
    detect_parser.add_argument("--theta", type=float, default=DEFAULT_THETA)
    detect_parser.add_argument("--min-shared-refs", type=int, default=2)
    detect_parser.add_argument(
        "--min-stream-size",
        type=int,
        default=None,
        help="also write streams_display.jsonl with streams of at least this size",
    )
    detect_parser.add_argument("--similarity", choices=SIMILARITIES, default="delta_q")
    detect_parser.add_argument("--format", choices=CORPUS_FORMATS, default="jsonl")
    detect_parser.add_argument("--workers", type=int, default=1)
    detect_parser.add_argument("--out", required=True, help="output directory")
    detect_parser.set_defaults(handler=cmd_detect)

    compare_parser = subparsers.add_parser(
        "compare", help="compare stream partitions"
    )
    compare_parser.add_argument(
        "partitions",
        nargs="+",
        help="stream exports (.jsonl) or publication/stream tables (.tsv, .csv)",
    )
    compare_parser.add_argument("--names", nargs="+", help="display names")
    compare_parser.add_argument("--excel", action="store_true")
    compare_parser.add_argument("--pdf", action="store_true")
    compare_parser.add_argument("--out", required=True, help="output directory")
    compare_parser.set_defaults(handler=cmd_compare)

    synth_parser = subparsers.add_parser("synth", help="generate a planted corpus")
    synth_parser.add_argument("scenario", help="scenario file or shipped scenario name")
    synth_parser.add_argument("--seed", type=int, default=None)
    synth_parser.add_argument("--format", choices=CORPUS_FORMATS, default="jsonl")
    synth_parser.add_argument("--out", required=True, help="output directory")
    synth_parser.set_defaults(handler=cmd_synth)

    rerun_parser = subparsers.add_parser("rerun", help="reproduce a detect run")
    rerun_parser.add_argument("manifest", help="manifest.json of the run")
    rerun_parser.add_argument("--out", required=True, help="output directory")
    rerun_parser.set_defaults(handler=cmd_rerun)

    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return its exit status"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "compare" and len(args.partitions) < 2:
        parser.error("compare needs at least two partitions")

    setup_logging(args.log_dir, args.verbose)
    start = time.time()
    try:
        status = args.handler(args)
    except ExportError as e:
        logger.error(f"{e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except (BCStreamsError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {e}", exc_info=True)
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    logger.info(f"{args.command} finished in {time.time() - start:.2f}s")
    return status


def main():
    """Main entry point"""
    sys.exit(run())


if __name__ == "__main__":
    main()
