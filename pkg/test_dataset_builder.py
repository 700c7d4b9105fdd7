"""
Unit tests for hard-irrelevant dataset construction.
Using pytest framework.
"""

import json
import logging

import pytest

from dataset_builder import (
    SHUFFLED_CATEGORY,
    CategoryPlan,
    CategoryReply,
    DatasetBuilder,
    NegsReply,
    build_dataset,
    bundle_records,
    extract_categories,
    generate_negatives,
    load_llm_json,
    pair_shuffled,
    read_checkpoint,
    shuffled_records,
    tier_plans,
    validate_reply,
)
from errors import (
    ConfigError,
    InvariantError,
    LlmClientError,
    LlmSchemaError,
    MissingTier,
    PlanMismatch,
    SchemaError,
    UnknownCategory,
)
from factories import TAXONOMY
from jsonl_io import iter_jsonl, read_dataset, write_json
from models import DifficultyTier
from prompts import PINNED_DIGESTS, file_digest, load_all, verify_digests
from providers import OfflineLlmClient
from validators import parse_category_path, validate_sample

PATHS = ["Object/ObjectExistence", "Attribute/Counting", "Scene/SceneExistence", "Action/ActionSequence"]
TIER_SIZES = {"strong": 1, "moderate": 2, "moderated": 2, "weak": 3}

QUERIES = [
    "A man slices bread on a wooden board.",
    "A woman opens the fridge then takes out milk.",
    "Two dogs run across the park.",
    "A child throws a red ball toward the wall.",
    "A chef stirs soup in a large pot.",
    "A person enters the room and turns on the light.",
    "A cyclist rides faster than the bus.",
    "A girl puts her hat on the table.",
    "Someone pours water into three glasses.",
    "A boy rolls a tire down the street.",
]


def extraction_reply(paths):
    return json.dumps({"eligible_categories": [{"path": p, "reason": "r"} for p in paths]})


def negatives_reply(tiers=("strong", "moderate", "weak"), paths=PATHS, with_answer=True):
    negs = {}
    for tier in tiers:
        applied = paths[:TIER_SIZES[tier]]
        blocks = ["<irrelevant_answer>No such moment in this video.</irrelevant_answer>"] if with_answer else []
        for path in applied:
            tag = TAXONOMY[path].category.tag
            blocks.append(f"<{tag}>The video differs here.</{tag}>")
        negs[tier] = {
            "irrel_query": f"An edited query ({tier}).",
            "applied_categories": [{"path": p} for p in applied],
            "reasoning": "\n".join(blocks),
            "difficulty_tag": tier,
        }
    return json.dumps({"negs": negs})


def plan_for(paths=PATHS[:3]):
    return CategoryPlan("q", tuple((parse_category_path(p), "r") for p in paths))


@pytest.fixture
def corpus(make_relevant):
    return [make_relevant(f"vid-{i:02d}", (float(i), float(i) + 5.5), query=q, video_id=f"video-{i}")
            for i, q in enumerate(QUERIES)]


class TestLoadLlmJson:
    """Test cases for tolerant JSON decoding."""

    def test_plain(self):
        """Test plain JSON."""
        assert load_llm_json('{"a": 1}') == {"a": 1}

    def test_fenced(self):
        """Test code-fenced JSON."""
        assert load_llm_json('```json\n{"a": 1}\n```') == {"a": 1}

    def test_surrounding_prose(self):
        """Test JSON embedded in prose."""
        assert load_llm_json('Here you go: ["x", "y"] hope it helps') == ["x", "y"]

    def test_not_json(self):
        """Test prose without JSON."""
        with pytest.raises(LlmSchemaError):
            load_llm_json("I cannot help with that.")


class TestReplySchemas:
    """Test cases for LLM reply validation."""

    def test_category_reply(self):
        """Test a well-formed extraction reply with an extra key."""
        reply = validate_reply(CategoryReply, '{"eligible_categories": [{"path": "Attribute/Counting"}], "note": 1}')
        assert [(e.path, e.reason) for e in reply.eligible_categories] == [("Attribute/Counting", "")]

    @pytest.mark.parametrize("text", [
        '{"eligible_categories": "Attribute/Counting"}',
        '{"eligible_categories": [{"path": 3}]}',
        '{"eligible_categories": [["Attribute/Counting"]]}',
        '{"categories": []}',
        '["Attribute/Counting"]',
    ])
    def test_category_reply_rejected(self, text):
        """Test wrongly shaped extraction replies raise LlmSchemaError."""
        with pytest.raises(LlmSchemaError, match="CategoryReply"):
            validate_reply(CategoryReply, text)

    def test_negs_reply_accepts_bare_paths_and_reasoning_lines(self):
        """Test echoed paths may be plain strings and reasoning a list of lines."""
        text = json.dumps({"negs": {"strong": {
            "irrel_query": "q", "applied_categories": [PATHS[0]], "reasoning": ["a", "b"],
        }}})
        entry = validate_reply(NegsReply, text).negs["strong"]
        assert entry.echoed_paths == [PATHS[0]]
        assert entry.reasoning_text == "a\nb"

    @pytest.mark.parametrize("applied", [[[PATHS[0]]], [{"path": {"name": PATHS[0]}}], [7], PATHS[0]])
    def test_negs_reply_rejects_malformed_echo(self, applied):
        """Test category echoes that are not paths are schema errors."""
        text = json.dumps({"negs": {"strong": {"irrel_query": "q", "applied_categories": applied, "reasoning": "r"}}})
        with pytest.raises(LlmSchemaError):
            validate_reply(NegsReply, text)

    def test_not_json(self):
        """Test prose is reported before validation."""
        with pytest.raises(LlmSchemaError, match="not JSON"):
            validate_reply(NegsReply, "sorry")


class TestExtractCategories:
    """Test cases for category extraction."""

    def test_top3_in_order(self, scripted_llm):
        """Test four valid paths keep the first three in order."""
        llm = scripted_llm([extraction_reply(PATHS)])
        plan = extract_categories("A man slices bread.", llm)
        assert [c.path for c in plan.selected_top3] == PATHS[:3]
        assert not plan.incomplete
        assert len(llm.calls) == 1

    def test_unknown_path_dropped(self, scripted_llm, caplog):
        """Test an unknown path is dropped with a warning."""
        llm = scripted_llm([extraction_reply(["Foo/Bar"] + PATHS[:3])])
        with caplog.at_level(logging.WARNING):
            plan = extract_categories("A man slices bread.", llm)
        assert [c.path for c in plan.selected_top3] == PATHS[:3]
        assert "Foo/Bar" in caplog.text

    def test_non_json_twice(self, scripted_llm):
        """Test two unparsable replies raise LlmSchemaError."""
        llm = scripted_llm(["no idea", "still no idea"])
        with pytest.raises(LlmSchemaError):
            extract_categories("A man slices bread.", llm)
        assert len(llm.calls) == 2

    def test_reask_when_short(self, scripted_llm):
        """Test a short first reply is topped up by a re-ask."""
        llm = scripted_llm([extraction_reply(PATHS[:2]), extraction_reply(PATHS[1:4])])
        plan = extract_categories("A man slices bread.", llm)
        assert [c.path for c in plan.selected_top3] == PATHS[:3]
        assert len(llm.calls) == 2

    def test_incomplete_plan(self, scripted_llm):
        """Test fewer than three categories after the re-ask flags the plan."""
        llm = scripted_llm([extraction_reply(PATHS[:2])])
        plan = extract_categories("A man slices bread.", llm)
        assert plan.incomplete
        assert len(plan.selected_top3) == 2
        assert [t.difficulty for t in tier_plans(plan)] == [DifficultyTier.STRONG, DifficultyTier.MODERATE]

    def test_only_unknown_paths(self, scripted_llm):
        """Test replies naming only unknown paths."""
        with pytest.raises(UnknownCategory):
            extract_categories("q", scripted_llm([extraction_reply(["Foo/Bar"])]))

    def test_empty_query(self, scripted_llm):
        """Test an empty query is rejected before any call."""
        llm = scripted_llm([extraction_reply(PATHS)])
        with pytest.raises(SchemaError):
            extract_categories("  ", llm)
        assert llm.calls == []

    def test_sends_prompt_verbatim(self, scripted_llm):
        """Test the embedded system prompt is sent unchanged."""
        llm = scripted_llm([extraction_reply(PATHS)])
        extract_categories("A man slices bread.", llm)
        system, payload = llm.calls[0]
        assert system == load_all()["category_extraction.txt"].build_system_prompt()
        assert json.loads(payload) == {"related_query": "A man slices bread."}


class TestTierPlans:
    """Test cases for prefix-nested tier plans."""

    def test_nesting(self):
        """Test strong uses c1, moderate c1-c2, weak c1-c3."""
        plans = tier_plans(plan_for())
        assert [[c.path for c in p.categories] for p in plans] == [PATHS[:1], PATHS[:2], PATHS[:3]]
        assert plans[2].to_payload()["difficulty"] == "weak"

    def test_duplicate_categories(self):
        """Test a plan cannot repeat a category."""
        with pytest.raises(InvariantError):
            plan_for([PATHS[0], PATHS[0]])


class TestGenerateNegatives:
    """Test cases for hard-negative generation."""

    def test_valid_bundle(self, scripted_llm, make_relevant):
        """Test a canned response with all three tiers."""
        bundle = generate_negatives(make_relevant(), plan_for(), scripted_llm([negatives_reply()]))
        assert [v.difficulty for v in bundle.variants] == list(DifficultyTier)
        weak = bundle.get(DifficultyTier.WEAK)
        assert weak.irrelevant_answer == "No such moment in this video."
        assert [path for path, _ in weak.category_explanations] == PATHS[:3]

    def test_payload(self, scripted_llm, make_relevant):
        """Test the request carries the query, timestamp and plans."""
        llm = scripted_llm([negatives_reply()])
        generate_negatives(make_relevant(), plan_for(), llm)
        payload = json.loads(llm.calls[0][1])
        assert payload["related_query"] == "A man slices bread."
        assert payload["related_query_timestamp"] == "4.0-8.0 second"
        assert [p["difficulty"] for p in payload["plans"]] == ["strong", "moderate", "weak"]

    def test_moderated_alias(self, scripted_llm, make_relevant):
        """Test the prompt's own tier spelling is accepted."""
        llm = scripted_llm([negatives_reply(("strong", "moderated", "weak"))])
        bundle = generate_negatives(make_relevant(), plan_for(), llm)
        assert bundle.get(DifficultyTier.MODERATE) is not None

    def test_missing_tier(self, scripted_llm, make_relevant):
        """Test a response without the weak tier."""
        llm = scripted_llm([negatives_reply(("strong", "moderate"))])
        with pytest.raises(MissingTier) as info:
            generate_negatives(make_relevant(), plan_for(), llm)
        assert info.value.tier == "weak"

    def test_missing_irrelevant_answer(self, scripted_llm, make_relevant):
        """Test reasoning without an irrelevant_answer block."""
        llm = scripted_llm([negatives_reply(with_answer=False)])
        with pytest.raises(LlmSchemaError):
            generate_negatives(make_relevant(), plan_for(), llm)

    def test_plan_mismatch(self, scripted_llm, make_relevant):
        """Test categories that differ from the plan."""
        other = ["Attribute/Comparison", "Attribute/Counting", "Scene/SceneExistence"]
        llm = scripted_llm([negatives_reply(paths=other)])
        with pytest.raises(PlanMismatch):
            generate_negatives(make_relevant(), plan_for(), llm)

    def test_nested_list_echo(self, scripted_llm, make_relevant):
        """Test a nested-list category echo is a schema error after one re-ask."""
        reply = json.loads(negatives_reply())
        reply["negs"]["strong"]["applied_categories"] = [[PATHS[0]]]
        llm = scripted_llm([json.dumps(reply)])
        with pytest.raises(LlmSchemaError):
            generate_negatives(make_relevant(), plan_for(), llm)
        assert len(llm.calls) == 2

    def test_reask_on_bad_json(self, scripted_llm, make_relevant):
        """Test one unparsable reply is retried."""
        llm = scripted_llm(["oops", negatives_reply()])
        bundle = generate_negatives(make_relevant(), plan_for(), llm)
        assert len(bundle.variants) == 3
        assert len(llm.calls) == 2

    def test_irrelevant_input_rejected(self, scripted_llm, make_irrelevant):
        """Test negatives are only generated from relevant samples."""
        with pytest.raises(InvariantError):
            generate_negatives(make_irrelevant(), plan_for(), scripted_llm([negatives_reply()]))


class TestBundleRecords:
    """Test cases for record assembly."""

    def test_records(self, scripted_llm, make_relevant):
        """Test one relevant and three irrelevant valid records."""
        sample = make_relevant()
        bundle = generate_negatives(sample, plan_for(), scripted_llm([negatives_reply()]))
        records = bundle_records(sample, bundle)
        assert [r["sample_id"] for r in records] == ["vid-1", "vid-1::strong", "vid-1::moderate", "vid-1::weak"]
        assert records[0]["paired_refusal"] == "No such moment in this video."
        for record in records[1:]:
            validated = validate_sample(record)
            assert validated.paired_segment == sample.gt_segment
            assert validated.original_query == sample.query
            assert len(validated.gt_categories) == validated.difficulty.modified_element_count


class TestDatasetBuilder:
    """Test cases for full build runs."""

    def test_offline_build(self, tmp_path, corpus):
        """Test a ten-sample corpus yields 10 relevant and 30 irrelevant records."""
        out = tmp_path / "hard_irrelevant.jsonl"
        report = build_dataset(corpus, OfflineLlmClient(), out, workers=4)
        samples = read_dataset(out)
        assert len(samples) == 40
        assert sum(s.is_relevant for s in samples) == 10
        assert report.relevant_written == 10
        assert report.irrelevant_written == 30
        assert report.per_tier == {"strong": 10, "moderate": 10, "weak": 10}
        assert not report.has_skips
        assert report.llm["calls"] == 20

    def test_output_order_is_input_order(self, tmp_path, corpus):
        """Test records are written in input order regardless of workers."""
        out = tmp_path / "out.jsonl"
        DatasetBuilder(OfflineLlmClient(), workers=8).build(corpus, out)
        relevant_ids = [r["sample_id"] for _, r in iter_jsonl(out) if r["relevance"] == "relevant"]
        assert relevant_ids == [s.sample_id for s in corpus]

    def test_one_failure_is_isolated(self, tmp_path, corpus, scripted_llm):
        """Test a permanently failing sample is skipped and reported."""
        offline = OfflineLlmClient()
        poisoned = corpus[3].query

        def reply(system, payload):
            if poisoned in payload:
                raise LlmClientError("provider unavailable")
            return offline.complete(system, payload)

        report = DatasetBuilder(scripted_llm([reply]), workers=2).build(corpus, tmp_path / "out.jsonl")
        assert report.relevant_written == 9
        assert [s["sample_id"] for s in report.skipped] == [corpus[3].sample_id]
        assert "LlmClientError" in report.skipped[0]["reason"]
        assert report.has_skips

    def test_malformed_reply_is_isolated(self, tmp_path, corpus, scripted_llm):
        """Test a malformed negatives reply skips its sample and the run completes."""
        reply = json.loads(negatives_reply())
        reply["negs"]["strong"]["applied_categories"] = [[PATHS[0]]]
        llm = scripted_llm([extraction_reply(PATHS), json.dumps(reply)])
        report = DatasetBuilder(llm, workers=1).build(corpus[:1], tmp_path / "out.jsonl")
        assert report.relevant_written == 0
        assert [s["sample_id"] for s in report.skipped] == [corpus[0].sample_id]
        assert "LlmSchemaError" in report.skipped[0]["reason"]

    def test_resume_skips_completed(self, tmp_path, corpus, scripted_llm):
        """Test a resumed run never re-sends completed samples."""
        out = tmp_path / "out.jsonl"
        DatasetBuilder(OfflineLlmClient()).build(corpus[:4], out)
        assert read_checkpoint(f"{out}.checkpoint.json") == {s.sample_id for s in corpus[:4]}

        offline = OfflineLlmClient()
        llm = scripted_llm([lambda system, payload: offline.complete(system, payload)])
        report = DatasetBuilder(llm).build(corpus, out, resume=True)

        assert report.resumed == 4
        assert report.relevant_written == 6
        sent = " ".join(payload for _, payload in llm.calls)
        assert not any(s.query in sent for s in corpus[:4])
        assert len(read_dataset(out)) == 40

    def test_restart_without_resume_overwrites(self, tmp_path, corpus):
        """Test a fresh run truncates earlier output."""
        out = tmp_path / "out.jsonl"
        builder = DatasetBuilder(OfflineLlmClient())
        builder.build(corpus[:2], out)
        builder.build(corpus[:2], out)
        assert len(read_dataset(out)) == 8

    def test_resume_without_checkpoint_rebuilds(self, tmp_path, corpus):
        """Test resuming with a lost checkpoint rewrites the output instead of appending."""
        out = tmp_path / "out.jsonl"
        builder = DatasetBuilder(OfflineLlmClient())
        builder.build(corpus[:2], out)
        (tmp_path / "out.jsonl.checkpoint.json").unlink()
        report = builder.build(corpus[:2], out, resume=True)
        assert report.resumed == 0
        assert len(read_dataset(out)) == 8

    def test_unknown_negative_source(self):
        """Test an unsupported negative source."""
        with pytest.raises(ConfigError, match="negatives"):
            DatasetBuilder(OfflineLlmClient(), negatives="random")

    def test_irrelevant_input_skipped(self, tmp_path, make_irrelevant):
        """Test irrelevant input samples are reported, not expanded."""
        report = DatasetBuilder(OfflineLlmClient()).build([make_irrelevant()], tmp_path / "out.jsonl")
        assert len(report.skipped) == 1

    def test_bad_checkpoint(self, tmp_path):
        """Test a malformed checkpoint file."""
        path = tmp_path / "cp.json"
        write_json(path, {"done": []})
        with pytest.raises(SchemaError):
            read_checkpoint(path)


class TestShuffledNegatives:
    """Test cases for the cross-video shuffled negative source."""

    def test_partners_come_from_other_videos(self, corpus):
        """Test every relevant sample is paired with another video's sample."""
        partners = pair_shuffled(corpus, seed=3)
        assert set(partners) == {s.sample_id for s in corpus}
        by_id = {s.sample_id: s for s in corpus}
        assert all(donor.video_id != by_id[sid].video_id for sid, donor in partners.items())

    def test_pairing_is_seeded(self, corpus):
        """Test the same seed pairs identically."""
        first = {sid: d.sample_id for sid, d in pair_shuffled(corpus, seed=11).items()}
        second = {sid: d.sample_id for sid, d in pair_shuffled(corpus, seed=11).items()}
        assert first == second

    def test_single_video_has_no_partners(self, make_relevant):
        """Test a corpus from one video cannot be shuffled."""
        samples = [make_relevant("a"), make_relevant("b", query="A man washes a knife.")]
        assert pair_shuffled(samples, seed=0) == {}

    def test_records(self, make_relevant):
        """Test the relevant record and its shuffled negative."""
        sample = make_relevant()
        donor = make_relevant("vid-2", query="Two dogs run across the park.", video_id="video-2")
        relevant, negative = shuffled_records(sample, donor)
        assert relevant["paired_refusal"] == negative["gt_refusal"]
        assert "Two dogs run across the park." in negative["gt_refusal"]
        validated = validate_sample(negative)
        assert validated.sample_id == "vid-1::shuffled"
        assert validated.query == donor.query
        assert validated.video_id == sample.video_id
        assert validated.original_query == sample.query
        assert validated.difficulty is DifficultyTier.STRONG
        assert [c.path for c in validated.gt_categories] == [SHUFFLED_CATEGORY]
        assert validated.paired_segment == sample.gt_segment

    def test_offline_build(self, tmp_path, corpus, scripted_llm):
        """Test a shuffled build writes a 1:1 dataset without LLM calls."""
        out = tmp_path / "shuffled.jsonl"
        llm = scripted_llm(["unused"])
        report = build_dataset(corpus, llm, out, negatives="shuffled", seed=5)
        samples = read_dataset(out)
        assert len(samples) == 20
        assert report.irrelevant_written == 10
        assert report.per_tier["strong"] == 10
        assert report.to_dict()["negatives"] == "shuffled"
        assert report.llm["calls"] == 0
        assert llm.calls == []
        video_of_query = {s.query: s.video_id for s in corpus}
        for sample in samples:
            if not sample.is_relevant:
                assert video_of_query[sample.query] != sample.video_id

    def test_build_skips_unpairable(self, tmp_path, make_relevant):
        """Test samples without a partner are reported as skips."""
        report = DatasetBuilder(OfflineLlmClient(), negatives="shuffled").build(
            [make_relevant()], tmp_path / "out.jsonl")
        assert report.skipped[0]["reason"] == "no query from another video to pair with"


class TestPrompts:
    """Test cases for the embedded prompt resources."""

    def test_digests_pinned(self):
        """Test every prompt file matches its pinned digest."""
        assert verify_digests() == {name: True for name in PINNED_DIGESTS}

    def test_digest_is_sha256_of_bytes(self):
        """Test digests are 64 hex characters."""
        for name in PINNED_DIGESTS:
            assert len(file_digest(name)) == 64

    def test_all_prompts_loaded(self):
        """Test the four prompts load with non-empty system text."""
        prompts = load_all()
        assert set(prompts) == set(PINNED_DIGESTS)
        assert all(p.build_system_prompt().strip() for p in prompts.values())
