#!/usr/bin/env python3
"""
toolsift Datagen - Synthetic tool-retrieval dataset generation

Each round samples a pool of tools, asks the LLM to pick a few of them and
write a user request that needs exactly those tools (Query Generation), then
optionally asks it to rewrite robotic requests into fluent ones (Query
Polish). Every round's randomness derives only from (seed, round), so runs
are reproducible under any thread scheduling. A pairwise judge compares two
query sets for naturalness.
"""
import json
import re
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field

from .errors import (
    ConstraintViolation, GenerationRejected, LlmTransportError, PoolLargerThanCorpus,
    UnparseableResponse,
)
from .llm import LlmClient
from .models import (
    Corpus, DatagenConfig, GeneratedRecord, Provenance, QueryRecord, ToolRecord, dump_record,
)
from .storage import iter_jsonl, text_digest, write_jsonl

logger = structlog.get_logger(__name__)

GENERATION_PROMPT = "query_generation.txt"
GENERATION_FORMAT = "query_generation_format.txt"
POLISH_PROMPT = "query_polish.txt"
POLISH_FORMAT = "query_polish_format.txt"
JUDGE_PROMPT = "judge.txt"

_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.DOTALL)

POLISH_EXAMPLES = [
    {
        "status": "refined",
        "refined_instruction": "Create a Spotify playlist based on the emotions and themes found in the lyrics of the song 'XYZ'.",
        "reasoning": "The original listed each step mechanically instead of stating the goal.",
    },
    {
        "status": "good",
        "refined_instruction": "",
        "reasoning": "The request states a single goal in natural language.",
    },
]


# -------------------------------
# Prompt assets
# -------------------------------
def load_prompt(name: str) -> str:
    """Read a template shipped in toolsift/prompts."""
    return resources.files("toolsift").joinpath("prompts", name).read_text(encoding="utf-8")


def render(template: str, **values) -> str:
    """Fill {placeholder} slots by plain substitution; other braces are left alone."""
    for key, value in values.items():
        template = template.replace("{" + key + "}", str(value))
    return template


def system_prompt_for(template_name: str, format_name: str, **values) -> str:
    """A shipped template followed by its answer-format addition, both rendered."""
    return render(load_prompt(template_name).rstrip() + "\n\n" + load_prompt(format_name), **values)


class InContextExample(BaseModel):
    instruction: str
    functions: List[str]
    explanation: str = ""


def examples_from_corpus(corpus: Corpus) -> List[InContextExample]:
    """Existing labeled queries as in-context examples (tool names, not ids)."""
    return [
        InContextExample(instruction=q.text, functions=[corpus.tools[t].name for t in q.tools])
        for q in sorted(corpus.queries, key=lambda q: q.query_id)
    ]


def load_examples(path: str) -> List[InContextExample]:
    """Read {"instruction", "functions", "explanation"?} objects from a JSON Lines file."""
    return [InContextExample(**obj) for _, obj in iter_jsonl(path)]


def format_examples(examples: Sequence[InContextExample]) -> str:
    return "\n".join(json.dumps(e.model_dump(), ensure_ascii=False) for e in examples)


def pool_listing(pool: Sequence[ToolRecord]) -> str:
    lines = ["Functions:"]
    lines.extend(f"- {tool.name}: {tool.description}" for tool in pool)
    return "\n".join(lines)


# -------------------------------
# Sampling
# -------------------------------
def sample_pool(tools: Union[Corpus, Sequence[ToolRecord]], cfg: DatagenConfig,
                round_index: int) -> List[ToolRecord]:
    """
    Draw cfg.t_pool distinct tools uniformly, seeded by (seed, round_index).

    Raises:
        PoolLargerThanCorpus: Fewer tools than cfg.t_pool
    """
    table = list(tools.tools.values()) if isinstance(tools, Corpus) else list(tools)
    if len(table) < cfg.t_pool:
        raise PoolLargerThanCorpus(cfg.t_pool, len(table))
    rng = np.random.default_rng([cfg.seed, round_index])
    picks = rng.choice(len(table), size=cfg.t_pool, replace=False)
    return [table[int(i)] for i in picks]


def sample_incontext(examples: Sequence[InContextExample], cfg: DatagenConfig,
                     round_index: int) -> List[InContextExample]:
    if not examples or cfg.n_incontext == 0:
        return []
    rng = np.random.default_rng([cfg.seed, round_index, 1])
    size = min(cfg.n_incontext, len(examples))
    return [examples[int(i)] for i in rng.choice(len(examples), size=size, replace=False)]


# -------------------------------
# Response parsing
# -------------------------------
def parse_json_object(raw: str) -> Dict:
    """
    Parse a single JSON object, tolerating a surrounding code fence.

    Raises:
        UnparseableResponse: Not a JSON object
    """
    text = raw.strip()
    fenced = _FENCE.match(text)
    if fenced:
        text = fenced.group(1)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise UnparseableResponse(raw, f"invalid JSON: {e.msg}") from e
    if not isinstance(obj, dict):
        raise UnparseableResponse(raw, "expected a JSON object")
    return obj


def _name_index(tools: Sequence[ToolRecord]) -> Dict[str, ToolRecord]:
    index: Dict[str, ToolRecord] = {}
    for tool in tools:
        index.setdefault(tool.name.casefold(), tool)
    return index


def parse_generation(raw: str, pool: Sequence[ToolRecord], cfg: DatagenConfig,
                     catalog: Optional[Sequence[ToolRecord]] = None) -> Tuple[str, List[str]]:
    """
    Extract (instruction, selected tool ids) from a generation response.

    Raises:
        UnparseableResponse: Bad JSON, missing fields, or a function name that
            matches no known tool
        ConstraintViolation: A tool outside the pool, or a selection size
            outside [m_min, m_max]
    """
    obj = parse_json_object(raw)
    instruction = obj.get("instruction")
    functions = obj.get("functions")
    if not isinstance(instruction, str) or not instruction.strip():
        raise UnparseableResponse(raw, "missing instruction")
    if not isinstance(functions, list) or not all(isinstance(f, str) for f in functions):
        raise UnparseableResponse(raw, "functions must be a list of names")

    in_pool = _name_index(pool)
    known = _name_index(catalog) if catalog is not None else {}
    selected: List[str] = []
    for name in functions:
        key = name.strip().casefold()
        tool = in_pool.get(key)
        if tool is None:
            if key in known:
                raise ConstraintViolation(f"{name!r} is not in the sampled pool")
            raise UnparseableResponse(raw, f"unknown function {name!r}")
        if tool.tool_id not in selected:
            selected.append(tool.tool_id)

    if not cfg.m_min <= len(selected) <= cfg.m_max:
        raise ConstraintViolation(
            f"selected {len(selected)} tools, allowed range is [{cfg.m_min}, {cfg.m_max}]"
        )
    return instruction.strip(), selected


# -------------------------------
# Generation stages
# -------------------------------
def generate_query(pool: Sequence[ToolRecord], in_context: Sequence[InContextExample], client: LlmClient,
                   cfg: DatagenConfig, round_index: int = 0,
                   catalog: Optional[Sequence[ToolRecord]] = None) -> GeneratedRecord:
    """
    Ask the client for one request over the pool and validate it.

    Raises:
        LlmTransportError: The client call failed
        UnparseableResponse: The response could not be read (raw text kept)
        ConstraintViolation: The selection broke the M-range or pool rules
    """
    system_prompt = system_prompt_for(
        GENERATION_PROMPT, GENERATION_FORMAT,
        examples_str=format_examples(in_context),
        library_specific_instructions=cfg.library_instructions,
        m_min=cfg.m_min,
        m_max=cfg.m_max,
    )
    user_content = pool_listing(pool)
    raw = client.complete(system_prompt, user_content)
    instruction, selected = parse_generation(raw, pool, cfg, catalog)
    return GeneratedRecord(
        raw_query=instruction,
        selected_tools=selected,
        provenance=Provenance(
            round=round_index,
            pool=[tool.tool_id for tool in pool],
            prompts_hash=text_digest(system_prompt, user_content),
        ),
    )


def polish_query(record: GeneratedRecord, client: LlmClient, cfg: DatagenConfig) -> GeneratedRecord:
    """
    Rewrite a robotic request; "good" keeps the raw text. Tool labels never change.

    Raises:
        LlmTransportError: The client call failed
        UnparseableResponse: Unknown status or an empty refinement
    """
    system_prompt = system_prompt_for(
        POLISH_PROMPT, POLISH_FORMAT,
        in_context_examples="\n".join(json.dumps(e, ensure_ascii=False) for e in POLISH_EXAMPLES),
    )
    raw = client.complete(system_prompt, record.raw_query)
    obj = parse_json_object(raw)
    status = str(obj.get("status", "")).strip().lower()
    if status == "good":
        polished = record.raw_query
    elif status == "refined":
        refined = obj.get("refined_instruction")
        if not isinstance(refined, str) or not refined.strip():
            raise UnparseableResponse(raw, "refined status without refined_instruction")
        polished = refined.strip()
    else:
        raise UnparseableResponse(raw, f"unknown status {status!r}")
    return record.model_copy(update={"polished_query": polished})


class Rejection(BaseModel):
    round: int
    reason: str
    detail: str = ""


class GenerationLog(BaseModel):
    """Accepted records and rejected rounds of one generation run."""
    records: List[GeneratedRecord] = Field(default_factory=list)
    rejections: List[Rejection] = Field(default_factory=list)
    n_rounds: int = 0

    @property
    def acceptance_rate(self) -> float:
        return len(self.records) / self.n_rounds if self.n_rounds else 0.0


def _run_round(round_index: int, tools: List[ToolRecord], examples: Sequence[InContextExample],
               client: LlmClient, cfg: DatagenConfig) -> Union[GeneratedRecord, Rejection]:
    pool = sample_pool(tools, cfg, round_index)
    in_context = sample_incontext(examples, cfg, round_index)
    stage = "generate"
    try:
        record = generate_query(pool, in_context, client, cfg, round_index, catalog=tools)
        if cfg.polish:
            stage = "polish"
            record = polish_query(record, client, cfg)
        return record
    except LlmTransportError as e:
        return Rejection(round=round_index, reason="transport", detail=f"{stage}: {e}")
    except GenerationRejected as e:
        return Rejection(round=round_index, reason=e.reason, detail=f"{stage}: {e}")


def run_generation(tools: Union[Corpus, Sequence[ToolRecord]], cfg: DatagenConfig, client: LlmClient,
                   examples: Sequence[InContextExample] = ()) -> GenerationLog:
    """
    Run cfg.rounds generation rounds, up to cfg.max_workers at a time.

    Returns:
        GenerationLog with records and rejections in round order

    Raises:
        PoolLargerThanCorpus: Fewer tools than cfg.t_pool
        LlmTransportError: Every round failed to reach the LLM
    """
    table = list(tools.tools.values()) if isinstance(tools, Corpus) else list(tools)
    if len(table) < cfg.t_pool:
        raise PoolLargerThanCorpus(cfg.t_pool, len(table))

    def one(round_index: int):
        return _run_round(round_index, table, examples, client, cfg)

    if cfg.max_workers > 1 and cfg.rounds > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            outcomes = list(pool.map(one, range(cfg.rounds)))
    else:
        outcomes = [one(r) for r in range(cfg.rounds)]

    log = GenerationLog(n_rounds=cfg.rounds)
    for outcome in outcomes:
        if isinstance(outcome, Rejection):
            logger.warning("generation_rejected", round=outcome.round, reason=outcome.reason,
                           detail=outcome.detail[:200])
            log.rejections.append(outcome)
        else:
            log.records.append(outcome)

    if cfg.rounds and all(r.reason == "transport" for r in log.rejections) \
            and len(log.rejections) == cfg.rounds:
        raise LlmTransportError(f"All {cfg.rounds} generation rounds failed to reach the LLM")
    logger.info("generation_done", rounds=cfg.rounds, accepted=len(log.records),
                rejected=len(log.rejections))
    return log


# -------------------------------
# Judging
# -------------------------------
class JudgeCounts(BaseModel):
    a_wins: int = 0
    ties: int = 0
    b_wins: int = 0
    skipped: int = 0

    @property
    def judged(self) -> int:
        return self.a_wins + self.ties + self.b_wins


def parse_verdict(raw: str) -> Optional[str]:
    """Return "A", "B" or "TIE" from a plain-text or {"winner": ...} answer."""
    text = raw.strip()
    if text.startswith("{"):
        try:
            obj = parse_json_object(text)
            text = str(obj.get("winner", obj.get("verdict", "")))
        except UnparseableResponse:
            return None
    words = re.findall(r"[A-Za-z]+", text)
    if not words:
        return None
    first = words[0].upper()
    return first if first in ("A", "B", "TIE") else None


def judge_pairs(set_a: Sequence[str], set_b: Sequence[str], client: LlmClient, n_samples: int,
                seed: int = 0) -> JudgeCounts:
    """
    Compare n_samples seeded (a, b) pairs; each pair is shown in a random
    A/B order and the verdict is mapped back to the set it came from. Pairs
    whose call fails or whose answer cannot be read are skipped and counted.
    """
    counts = JudgeCounts()
    if n_samples <= 0:
        return counts
    if not set_a or not set_b:
        raise ValueError("both query sets must be non-empty")

    system_prompt = load_prompt(JUDGE_PROMPT)
    rng = np.random.default_rng(seed)
    for i in range(n_samples):
        a = set_a[int(rng.integers(len(set_a)))]
        b = set_b[int(rng.integers(len(set_b)))]
        swapped = bool(rng.random() < 0.5)
        first, second = (b, a) if swapped else (a, b)
        try:
            raw = client.complete(system_prompt, f"Request A: {first}\nRequest B: {second}")
        except LlmTransportError as e:
            logger.warning("judge_pair_skipped", pair=i, reason="transport", detail=str(e))
            counts.skipped += 1
            continue
        verdict = parse_verdict(raw)
        if verdict is None:
            logger.warning("judge_pair_skipped", pair=i, reason="unparseable", detail=raw[:200])
            counts.skipped += 1
        elif verdict == "TIE":
            counts.ties += 1
        elif (verdict == "A") != swapped:
            counts.a_wins += 1
        else:
            counts.b_wins += 1
    return counts


# -------------------------------
# Export
# -------------------------------
def export_dataset(records: Sequence[GeneratedRecord], tools: Union[Corpus, Sequence[ToolRecord]],
                   tools_path: str, queries_path: str) -> Corpus:
    """
    Write the generated records as a corpus: the full tool table plus one
    train query per record, ordered by round, preferring polished text.

    Returns:
        The exported Corpus
    """
    table = list(tools.tools.values()) if isinstance(tools, Corpus) else list(tools)
    queries = [
        QueryRecord(
            query_id=f"gen-{record.provenance.round:06d}",
            text=record.text,
            tools=list(record.selected_tools),
            split="train",
        )
        for record in sorted(records, key=lambda r: r.provenance.round)
    ]
    corpus = Corpus.from_records(table, queries)
    write_jsonl(tools_path, (dump_record(t) for t in table))
    write_jsonl(queries_path, (dump_record(q) for q in queries))
    return corpus


def write_generation_log(log: GenerationLog, path: str) -> None:
    """One line per round: the accepted record or the rejection."""
    lines = [{"round": r.provenance.round, "status": "accepted", "record": dump_record(r)}
             for r in log.records]
    lines.extend({"round": r.round, "status": "rejected", "reason": r.reason, "detail": r.detail}
                 for r in log.rejections)
    write_jsonl(path, sorted(lines, key=lambda line: line["round"]))
