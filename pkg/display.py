"""
Console summaries for the toolkit's subcommands.
Uses Strategy Pattern with abstract base class.
"""

from abc import ABC, abstractmethod
from typing import Any, Dict, Optional

RULE = "=" * 60


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


class DisplayComponent(ABC):
    """Abstract base class for display components."""

    @abstractmethod
    def display(self, items: Dict[str, Any]) -> None:
        """Display items."""


class BuildReportDisplay(DisplayComponent):
    """Summary of a dataset build run."""

    def display(self, items: Dict[str, Any]) -> None:
        print("\n" + RULE)
        print("HARD-IRRELEVANT DATASET BUILD")
        print(RULE)
        print(f"\nOutput: {items['output_path']}")
        print(f"Negative source: {items.get('negatives', 'hard')}")
        print(f"Input samples: {items['input_samples']}  "
              f"(completed {items['completed']}, resumed {items['resumed']})")
        print(f"Relevant records: {items['relevant_written']}")
        print(f"Irrelevant records: {items['irrelevant_written']}")
        for tier, count in items["per_tier"].items():
            print(f"  • {tier}: {count}")
        if items["incomplete_plans"]:
            print(f"\nIncomplete category plans: {len(items['incomplete_plans'])}")
        if items["skipped"]:
            print(f"\nSkipped samples: {len(items['skipped'])}")
            for skip in items["skipped"]:
                print(f"  ✗ {skip['sample_id']}: {skip['reason']}")
        llm = items.get("llm") or {}
        if llm:
            print(f"\nLLM calls: {llm['calls']} (failures {llm['failures']}, "
                  f"mean latency {llm['mean_latency_s']:.3f}s)")
        print("\n" + RULE)


class ScoreSummaryDisplay(DisplayComponent):
    """Mean reward components overall and per relevance class."""

    def display(self, items: Dict[str, Any]) -> None:
        print("\n" + RULE)
        print("REWARD SUMMARY")
        print(RULE)
        print(f"\n{'subset':<12}{'n':>6}{'format':>9}{'r-iou':>9}{'explain':>9}{'correct':>9}{'total':>9}")
        for subset, summary in items.items():
            if summary is None:
                continue
            print(
                f"{subset:<12}{summary['n']:>6}{summary['format']:>9.4f}{summary['refuse_iou']:>9.4f}"
                f"{summary['explain']:>9.4f}{summary['correction']:>9.4f}{summary['total']:>9.4f}"
            )
        print("\n" + RULE)


class EvalReportDisplay(DisplayComponent):
    """Headline metrics of an evaluation report."""

    def display(self, items: Dict[str, Any]) -> None:
        print("\n" + RULE)
        print("RELEVANCE-AWARE EVALUATION")
        print(RULE)
        print(f"\nSamples: {items['n_samples']} "
              f"({items['n_relevant']} relevant, {items['n_irrelevant']} irrelevant)")
        recalls = "  ".join(f"R@{m}={_fmt(v)}" for m, v in items["recall_at"].items())
        print(f"RA-mIoU: {_fmt(items['ra_miou'])}   {recalls}")
        f1 = items["f1"]
        print(f"F1 relevant={_fmt(f1['relevant'])} irrelevant={_fmt(f1['irrelevant'])} "
              f"average={_fmt(f1['average'])}")
        explanation = items["explanation"]
        print(f"RT-IoU: {_fmt(explanation['rt_iou_mean'])}   SBert: {_fmt(explanation['sbert_mean'])}   "
              f"LLM score: {_fmt(explanation['llm_score_mean'], 2)}")
        for tier, summary in items.get("per_tier", {}).items():
            print(f"  • {tier}: n={summary['n']} refusal={_fmt(summary['refusal_rate'])} "
                  f"RA-mIoU={_fmt(summary['ra_miou'])} F1avg={_fmt(summary['f1']['average'])}")
        print("\n" + RULE)


class SimulationDisplay(DisplayComponent):
    """Final policy and convergence verdict of a GRPO simulation."""

    def display(self, items: Dict[str, Any]) -> None:
        print("\n" + RULE)
        print(f"GRPO SIMULATION: {items['scenario']} (seed {items['seed']}, {items['steps']} steps)")
        print(RULE)
        print(f"\n{'candidate':<24}{'reward':>10}{'final p':>10}")
        for candidate in items["candidates"]:
            print(f"{candidate['name']:<24}{candidate['reward']:>10.4f}{candidate['final_prob']:>10.4f}")
        print(f"\nreward argmax: {items['reward_argmax']}")
        print(f"policy argmax: {items['policy_argmax']}")
        print(f"converged={str(items['converged']).lower()}")
        if not items["learning_signal"]:
            print("note: all candidates tie on reward, no learning signal")
        print("\n" + RULE)
