"""Multi-agent extraction of sizing relations from a netlist.

One expert agent proposes relation records; employee agents agree or
refute them over a fixed number of rounds.  Turn order is deterministic:
the expert speaks first each round, then every employee in listed order.
The pool keeps a proposal when employee agreements outnumber refutations,
or when nobody took a stance at all (an unopposed expert proposal).
Expert stance lines are recorded but carry no vote.

Message grammar, anywhere in an agent's reply:

    ```relations
    equal W M1 M2 ; matched pair
    ```
    AGREE: equal W M1 M2
    REFUTE: ratio L M4=2*M3
    EVIDENCE: "the mirror needs matched lengths"

Evidence attaches to the stance line above it.  Malformed records never
abort a session; they are logged per message and skipped.

Backends produce the raw reply text.  The scripted backend replays fixed
fixtures keyed by (agent, round), which makes whole sessions replayable
and byte-for-byte auditable; the HTTP backend posts the rendered prompt
to a live endpoint with bounded retries.
"""

from __future__ import annotations

import json
import re
import string
import time
from dataclasses import dataclass, field

from .assets import prompt_text
from .netlist import Netlist, emit_netlist
from .relations import (
    RelationError,
    SizingRelation,
    normalize,
    parse_record,
    record_of,
    validate,
)


class AgentError(RuntimeError):
    """Raised for protocol-level failures (missing fixture, bad backend)."""


@dataclass(frozen=True)
class AgentProfile:
    name: str
    role: str  # "expert" or "employee"

    def __post_init__(self):
        if self.role not in ("expert", "employee"):
            raise AgentError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class Message:
    agent: str
    role: str
    round: int
    text: str

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "role": self.role,
            "round": self.round,
            "text": self.text,
        }


_STANCE_RE = re.compile(r"^(AGREE|REFUTE):\s*(.+)$")
_EVIDENCE_RE = re.compile(r'^EVIDENCE:\s*"(.*)"\s*$')
_FENCE_RE = re.compile(r"```relations\s*\n(.*?)```", re.DOTALL)


@dataclass
class ParsedReply:
    proposals: list[SizingRelation] = field(default_factory=list)
    stances: list[tuple[str, SizingRelation, str]] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)


def parse_agent_output(text: str, provenance: str = "agent") -> ParsedReply:
    """Pull proposals, stances, and attached evidence out of a reply."""
    reply = ParsedReply()
    for block in _FENCE_RE.findall(text):
        for lineno, raw in enumerate(block.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                reply.proposals.append(parse_record(line, provenance=provenance))
            except RelationError as exc:
                reply.problems.append(f"proposal {line!r}: {exc}")
    pending_evidence: int | None = None
    for raw in text.splitlines():
        line = raw.strip()
        stance = _STANCE_RE.match(line)
        if stance:
            verb, body = stance.groups()
            try:
                record = parse_record(body.strip(), provenance=provenance)
            except RelationError as exc:
                reply.problems.append(f"stance {body.strip()!r}: {exc}")
                pending_evidence = None
                continue
            reply.stances.append((verb.lower(), record, ""))
            pending_evidence = len(reply.stances) - 1
            continue
        evidence = _EVIDENCE_RE.match(line)
        if evidence:
            if pending_evidence is None:
                reply.problems.append("evidence line with no stance above it")
                continue
            verb, record, _ = reply.stances[pending_evidence]
            reply.stances[pending_evidence] = (verb, record, evidence.group(1))
            pending_evidence = None
    return reply


@dataclass
class PoolEntry:
    relation: SizingRelation
    proposer: str
    round_proposed: int
    votes: dict[str, str] = field(default_factory=dict)  # agent -> verb
    evidence: list[str] = field(default_factory=list)

    @property
    def agreement_count(self) -> int:
        return sum(1 for verb in self.votes.values() if verb == "agree")

    @property
    def refutation_count(self) -> int:
        return sum(1 for verb in self.votes.values() if verb == "refute")

    @property
    def kept(self) -> bool:
        if not self.votes:
            return True  # unopposed proposal stands
        return self.agreement_count > self.refutation_count


@dataclass
class MessagePool:
    """Vote ledger over proposal keys, in proposal order."""

    entries: dict[tuple, PoolEntry] = field(default_factory=dict)
    discarded_stances: list[str] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)

    def add_proposal(self, relation: SizingRelation, agent: str, round_no: int):
        key = relation.key()
        if key not in self.entries:
            self.entries[key] = PoolEntry(relation, agent, round_no)

    def add_stance(
        self, verb: str, record: SizingRelation, agent: str, voting: bool, note: str
    ):
        key = record.key()
        entry = self.entries.get(key)
        if entry is None:
            self.problems.append(
                f"{agent} took a stance on an unproposed record {record_of(record)!r}"
            )
            return
        if not voting:
            self.discarded_stances.append(
                f"{agent}: {verb} {record_of(record)} (no vote: expert stance)"
            )
            return
        entry.votes[agent] = verb  # one vote per agent, latest stance wins
        if note:
            entry.evidence.append(f"{agent}: {note}")

    def kept_relations(self) -> list[SizingRelation]:
        return [e.relation for e in self.entries.values() if e.kept]

    def vote_table(self) -> list[dict]:
        rows = []
        for entry in self.entries.values():
            rows.append(
                {
                    "record": record_of(entry.relation),
                    "proposer": entry.proposer,
                    "round": entry.round_proposed,
                    "agreements": len(entry.agreements),
                    "refutations": len(entry.refutations),
                    "kept": entry.kept,
                }
            )
        return rows


class ScriptedBackend:
    """Replays canned replies keyed by (agent name, round number)."""

    def __init__(self, fixtures: list[dict]):
        self.replies: dict[tuple[str, int], str] = {}
        for row in fixtures:
            key = (row["agent"], int(row["round"]))
            if key in self.replies:
                raise AgentError(f"duplicate fixture for {key}")
            self.replies[key] = row["text"]

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    @classmethod
    def from_transcript(cls, messages: list[Message]) -> "ScriptedBackend":
        return cls([
            {"agent": m.agent, "round": m.round, "text": m.text}
            for m in messages
        ])

    def respond(self, profile: AgentProfile, round_no: int, prompt: str) -> str:
        try:
            return self.replies[(profile.name, round_no)]
        except KeyError:
            raise AgentError(
                f"no scripted reply for {profile.name} in round {round_no}"
            ) from None


class HTTPBackend:
    """POSTs the prompt to a completion endpoint with bounded retries."""

    def __init__(
        self,
        url: str,
        model: str = "",
        timeout: float = 120.0,
        retries: int = 3,
        backoff: float = 1.0,
        headers: dict | None = None,
    ):
        self.url = url
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.headers = dict(headers or {})

    def respond(self, profile: AgentProfile, round_no: int, prompt: str) -> str:
        import requests

        payload = {
            "model": self.model,
            "agent": profile.name,
            "round": round_no,
            "prompt": prompt,
        }
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                response = requests.post(
                    self.url,
                    json=payload,
                    timeout=self.timeout,
                    headers=self.headers,
                )
                response.raise_for_status()
                return response.json()["text"]
            except Exception as exc:  # noqa: BLE001 - any transport failure retries
                last_error = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2.0**attempt))
        raise AgentError(f"backend failed after {self.retries} tries: {last_error}")


def _render(template_name: str, **values) -> str:
    return string.Template(prompt_text(template_name)).substitute(**values)


@dataclass(frozen=True)
class ExtractionJob:
    netlist: Netlist
    expert: AgentProfile
    employees: tuple[AgentProfile, ...]
    backend: object
    rounds: int = 2
    objective_text: str = ""
    seed_records: tuple[str, ...] = ()

    def __post_init__(self):
        if self.expert.role != "expert":
            raise AgentError("first agent must have the expert role")
        if any(p.role != "employee" for p in self.employees):
            raise AgentError("supporting agents must have the employee role")
        names = [self.expert.name] + [p.name for p in self.employees]
        if len(set(names)) != len(names):
            raise AgentError("agent names must be unique")
        if self.rounds < 1:
            raise AgentError("at least one round required")


@dataclass
class ExtractionResult:
    kept: list[SizingRelation]
    rejected: list[tuple[SizingRelation, str]]
    vote_table: list[dict]
    transcript: list[Message]
    problems: list[str]
    discarded_stances: list[str]


def _pool_digest(pool: MessagePool) -> str:
    lines = [record_of(e.relation) for e in pool.entries.values()]
    return "\n".join(lines) if lines else "(no proposals yet)"


def run_extraction(job: ExtractionJob) -> ExtractionResult:
    """Drive the session; deterministic given the backend's replies."""
    pool = MessagePool()
    transcript: list[Message] = []
    netlist_text = emit_netlist(job.netlist)
    for record in job.seed_records:
        try:
            pool.add_proposal(parse_record(record, provenance="topology"), "seed", 0)
        except RelationError as exc:
            pool.problems.append(f"seed record {record!r}: {exc}")

    agents = [job.expert, *job.employees]
    for round_no in range(1, job.rounds + 1):
        for profile in agents:
            template = (
                f"{profile.role}_system.txt" if round_no == 1
                else f"{profile.role}_round.txt"
            )
            prompt = _render(
                template,
                netlist=netlist_text,
                objective=job.objective_text or "(none stated)",
                round=round_no,
                pool=_pool_digest(pool),
            )
            text = job.backend.respond(profile, round_no, prompt)
            transcript.append(Message(profile.name, profile.role, round_no, text))
            reply = parse_agent_output(text)
            for problem in reply.problems:
                pool.problems.append(f"{profile.name} round {round_no}: {problem}")
            for relation in reply.proposals:
                pool.add_proposal(relation, profile.name, round_no)
            for verb, record, note in reply.stances:
                pool.add_stance(
                    verb, record, profile.name,
                    voting=profile.role == "employee", note=note,
                )

    survivors = pool.kept_relations()
    accepted, invalid = validate(survivors, job.netlist)
    rejected = [
        (entry.relation, "outvoted")
        for entry in pool.entries.values()
        if not entry.kept
    ] + [(rel, reason) for rel, reason in invalid]
    return ExtractionResult(
        kept=accepted,
        rejected=rejected,
        vote_table=pool.vote_table(),
        transcript=transcript,
        problems=pool.problems,
        discarded_stances=pool.discarded_stances,
    )


def normalized_result(result: ExtractionResult):
    """Fold the kept relations into a RelationSet."""
    return normalize(result.kept)


# ------------------------------------------------------------------ persist


def transcript_to_jsonl(messages: list[Message]) -> str:
    return "\n".join(
        json.dumps(m.to_dict(), sort_keys=True, separators=(",", ":"))
        for m in messages
    ) + ("\n" if messages else "")


def transcript_from_jsonl(text: str) -> list[Message]:
    messages = []
    for line in text.splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        messages.append(
            Message(row["agent"], row["role"], int(row["round"]), row["text"])
        )
    return messages


def replay(job: ExtractionJob, transcript: list[Message]) -> ExtractionResult:
    """Re-run a recorded session through the scripted backend."""
    from dataclasses import replace

    scripted = replace(job, backend=ScriptedBackend.from_transcript(transcript))
    return run_extraction(scripted)
