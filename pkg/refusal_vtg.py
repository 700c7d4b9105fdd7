"""
Refusal-aware VTG toolkit - command-line application.
Ties the dataset builder, reward engine, metrics and GRPO simulator into
reproducible subcommands.

Exit codes: 0 success, 1 hard failure, 2 partial completion.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from config import ConcurrencySettings, ProviderFactory, ToolConfig, load_config, with_overrides
from dataset_builder import NEGATIVE_SOURCES, DatasetBuilder
from display import BuildReportDisplay, EvalReportDisplay, ScoreSummaryDisplay, SimulationDisplay
from errors import ToolkitError
from grpo_sim import ScenarioFactory, run_simulation
from jsonl_io import read_dataset, read_outputs, write_json, write_jsonl
from metrics import EvalOptions, PredictionRecord, aggregate_report, check_coverage
from models import GroundingSample
from providers import EmbeddingProvider, LlmClient, OfflineLlmClient
from rewards import RewardEngine, summarize_breakdowns

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARTIAL = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class RefusalAwareToolkit:
    """Main application orchestrating all components."""

    def __init__(self, config: Optional[ToolConfig] = None):
        self.config = config or ToolConfig()
        self._embedder: Optional[EmbeddingProvider] = None
        self._llm: Optional[LlmClient] = None

        # Display components
        self.build_display = BuildReportDisplay()
        self.score_display = ScoreSummaryDisplay()
        self.eval_display = EvalReportDisplay()
        self.simulation_display = SimulationDisplay()

    # Providers are built on first use so a missing API key only fails
    # the subcommand that needs it.
    @property
    def embedder(self) -> EmbeddingProvider:
        if self._embedder is None:
            self._embedder = ProviderFactory.create_embedder(self.config)
        return self._embedder

    @property
    def llm(self) -> LlmClient:
        if self._llm is None:
            self._llm = ProviderFactory.create_llm(self.config)
        return self._llm

    def _predictions(self, dataset: Sequence[GroundingSample], outputs_path: Path) -> List[PredictionRecord]:
        predictions = [PredictionRecord.from_output(sid, raw) for sid, raw in read_outputs(outputs_path)]
        check_coverage(dataset, predictions)
        return predictions

    def build_dataset(self, input_path: Path, out_path: Path, resume: bool = False,
                      report_out: Optional[Path] = None, checkpoint: Optional[Path] = None,
                      negatives: str = "hard") -> int:
        """Generate the irrelevant-query dataset from a relevant corpus."""
        samples = read_dataset(input_path)
        # Shuffled negatives make no LLM calls, so no provider or key is needed.
        llm = self.llm if negatives == "hard" else OfflineLlmClient()
        builder = DatasetBuilder(
            llm,
            workers=self.config.concurrency.workers,
            temperature_generation=self.config.llm.temperature_generation,
            temperature_classification=self.config.llm.temperature_classification,
            negatives=negatives,
            seed=self.config.seed,
        )
        report = builder.build(samples, out_path, checkpoint, resume)
        summary = report.to_dict()
        write_json(report_out or Path(f"{out_path}.report.json"), summary)
        self.build_display.display(summary)
        return EXIT_PARTIAL if report.has_skips else EXIT_OK

    def score(self, dataset_path: Path, outputs_path: Path, out: Optional[Path] = None,
              summary_out: Optional[Path] = None) -> int:
        """Reward breakdown for every (sample, output) pair."""
        dataset = read_dataset(dataset_path)
        by_id = {p.sample_id: p.raw_output for p in self._predictions(dataset, outputs_path)}
        engine = RewardEngine(self.embedder, self.config.reward_config())
        breakdowns = engine.score_batch(
            dataset, [by_id[s.sample_id] for s in dataset], self.config.concurrency.workers
        )
        rows = (
            {"sample_id": s.sample_id, "relevance": s.relevance.value, **b.to_dict()}
            for s, b in zip(dataset, breakdowns)
        )
        write_jsonl(out or Path(f"{outputs_path}.rewards.jsonl"), rows)
        summary = summarize_breakdowns(breakdowns, dataset)
        if summary_out:
            write_json(summary_out, summary)
        self.score_display.display(summary)
        return EXIT_OK

    def evaluate(self, dataset_path: Path, outputs_path: Path, judge: bool = False,
                 report_out: Optional[Path] = None, csv_out: Optional[Path] = None) -> int:
        """Relevance-aware metrics report."""
        dataset = read_dataset(dataset_path)
        predictions = self._predictions(dataset, outputs_path)
        report = aggregate_report(
            dataset, predictions,
            embedder=self.embedder,
            llm=self.llm if judge else None,
            options=EvalOptions(judge=judge, workers=self.config.concurrency.workers),
        )
        summary = report.to_dict()
        write_json(report_out or Path(f"{outputs_path}.report.json"), summary)
        if csv_out:
            _write_csv_row(Path(csv_out), report.csv_row())
        self.eval_display.display(summary)
        return EXIT_OK

    def simulate(self, scenario: str, trace_out: Optional[Path] = None, seed: Optional[int] = None) -> int:
        """Run the GRPO simulation on a bundled or user scenario."""
        spec = ScenarioFactory.resolve(scenario)
        engine = RewardEngine(self.embedder, self.config.reward_config())
        trace = run_simulation(self.config.sim_config(seed), spec, engine)
        write_jsonl(trace_out or Path(f"{spec.name}.trace.jsonl"), trace.to_records())
        self.simulation_display.display(trace.summary())
        return EXIT_OK


def _write_csv_row(path: Path, row: Dict[str, float]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)


# ============================================================================
# Command-line interface
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--workers", type=int, help="override concurrency.workers")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="refusal_vtg", description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    build = commands.add_parser("build-dataset", parents=[common],
                                help="generate hard-irrelevant queries and refusals")
    build.add_argument("--input", type=Path, required=True)
    build.add_argument("--out", type=Path, required=True)
    build.add_argument("--resume", action="store_true")
    build.add_argument("--report-out", type=Path)
    build.add_argument("--checkpoint", type=Path)
    build.add_argument("--negatives", choices=NEGATIVE_SOURCES, default="hard",
                       help="hard: LLM-edited queries per tier; shuffled: queries from other videos")

    score = commands.add_parser("score", parents=[common], help="reward breakdowns for model outputs")
    score.add_argument("--dataset", type=Path, required=True)
    score.add_argument("--outputs", type=Path, required=True)
    score.add_argument("--out", type=Path)
    score.add_argument("--summary-out", type=Path)

    evaluate = commands.add_parser("evaluate", parents=[common], help="relevance-aware metrics")
    evaluate.add_argument("--dataset", type=Path, required=True)
    evaluate.add_argument("--outputs", type=Path, required=True)
    evaluate.add_argument("--judge", choices=["on", "off"], default="off")
    evaluate.add_argument("--report-out", type=Path)
    evaluate.add_argument("--csv-out", type=Path)

    simulate = commands.add_parser("simulate-grpo", parents=[common],
                                   help="toy GRPO run on a finite response set")
    simulate.add_argument("--scenario", default="irrelevant_refusal",
                          help="bundled scenario name or path to a scenario YAML")
    simulate.add_argument("--trace-out", type=Path)
    return parser


def _apply_overrides(config: ToolConfig, args: argparse.Namespace) -> ToolConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["concurrency"] = ConcurrencySettings(config.concurrency.max_in_flight, args.workers)
    return with_overrides(config, **overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main application entry point."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, force=True)

    try:
        toolkit = RefusalAwareToolkit(_apply_overrides(load_config(args.config), args))
        if args.command == "build-dataset":
            if not args.input.exists():
                raise FileNotFoundError(f"input file not found: {args.input}")
            return toolkit.build_dataset(args.input, args.out, args.resume, args.report_out,
                                         args.checkpoint, args.negatives)
        if args.command == "score":
            return toolkit.score(args.dataset, args.outputs, args.out, args.summary_out)
        if args.command == "evaluate":
            return toolkit.evaluate(args.dataset, args.outputs, args.judge == "on",
                                    args.report_out, args.csv_out)
        return toolkit.simulate(args.scenario, args.trace_out)
    except (ToolkitError, OSError) as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
