"""Road-type-indexed knowledge base and chat prompt assembly.

The knowledge base holds one crash-analysis template per (road type,
direction tag) pair. Prompt builders assemble the two staged chat bundles:
a meta-message bundle that asks for road type, car count, and driving
directions, and an extraction bundle grounded in the retrieved template.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .cases import CrashReport
from .dsl import RoadType, dsl_grammar_text

# Fixed prompt strings. The acknowledgment turns keep the chat alternation
# valid without contributing variable content.
META_SYSTEM_PERSONA = (
    "Role: An experienced road engineering expert skilled in identifying road types.")
EXTRACTION_SYSTEM_PERSONA = (
    "Role: An experienced road engineering expert skilled in extracting "
    "scenario representations.")
ACK_ASK_FOR_EXAMPLE_META = (
    "Please go ahead and provide an example so I can better understand the task "
    "and assist you accordingly.")
ACK_ASK_FOR_EXAMPLE_EXTRACTION = (
    "Got it! Please provide me with an example so I can better understand this task!")
ACK_READY_FOR_NEW_CASE = (
    "Got it! Please provide a new crash case and I'll follow the process to "
    "extract the required information.")
META_OUTPUT_FORMAT = (
    "{'Road type': '<your answer>', 'Number of cars': <your answer>, "
    "'Driving direction': '<your answer>'}")

# Section headings every analysis template must provide, in order.
TEMPLATE_REQUIRED_SECTIONS = (
    "Step 1: Extract Actors Information",
    "Step 2: Extract Road Network",
    "Step 3: Extract Environment",
)


class KnowledgeBaseError(Exception):
    pass


@dataclass(frozen=True)
class MetaMessage:
    """First-stage extraction output: road type, car count, per-car directions."""

    road_type: RoadType
    num_cars: int
    driving_directions: tuple[str, ...]

    def __post_init__(self):
        if self.num_cars < 1:
            raise ValueError("num_cars must be >= 1")
        if len(self.driving_directions) != self.num_cars:
            raise ValueError(
                f"expected {self.num_cars} driving directions, "
                f"got {len(self.driving_directions)}")


@dataclass(frozen=True)
class ChatPart:
    kind: str  # "text" | "image"
    text: str | None = None
    data: bytes | None = None
    media_type: str | None = None

    def __post_init__(self):
        if self.kind == "text":
            if self.text is None:
                raise ValueError("text part needs text")
        elif self.kind == "image":
            if not self.data or not self.media_type:
                raise ValueError("image part needs non-empty bytes and a media type")
        else:
            raise ValueError(f"unknown part kind {self.kind!r}")


def text_part(text: str) -> ChatPart:
    return ChatPart(kind="text", text=text)


def image_part(data: bytes, media_type: str) -> ChatPart:
    return ChatPart(kind="image", data=data, media_type=media_type)


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user" | "assistant"
    parts: tuple[ChatPart, ...]


@dataclass(frozen=True)
class PromptBundle:
    """Ordered chat messages: system first, then strict user/assistant alternation,
    ending on a user message."""

    messages: tuple[ChatMessage, ...]
    degraded_missing_sketch: bool = False
    warnings: tuple[str, ...] = ()

    def check(self) -> None:
        if not self.messages:
            raise ValueError("empty bundle")
        if self.messages[0].role != "system":
            raise ValueError("first message must have role system")
        for i, msg in enumerate(self.messages[1:], start=1):
            expected = "user" if i % 2 == 1 else "assistant"
            if msg.role != expected:
                raise ValueError(
                    f"message {i} must have role {expected}, got {msg.role}")
        if self.messages[-1].role != "user":
            raise ValueError("final message must have role user")

    def text_content(self) -> str:
        """All text parts joined; used by vocabulary scans and tests."""
        chunks = []
        for msg in self.messages:
            for part in msg.parts:
                if part.kind == "text":
                    chunks.append(part.text)
        return "\n".join(chunks)


@dataclass(frozen=True)
class KnowledgeEntry:
    road_type: RoadType
    direction_key: str | None
    example_summary: str
    example_sketch_path: Path | None
    analysis_template: str
    dsl_reference: str

    def example_sketch_bytes(self) -> bytes | None:
        if self.example_sketch_path is None:
            return None
        return self.example_sketch_path.read_bytes()


ALL_ROAD_TYPES = tuple(RoadType)


@dataclass
class KnowledgeBase:
    entries: dict[tuple[RoadType, str | None], KnowledgeEntry]
    source_dir: Path
    access_count: int = 0

    def coverage(self) -> dict[RoadType, bool]:
        present = {rt: False for rt in ALL_ROAD_TYPES}
        for road_type, _ in self.entries:
            present[road_type] = True
        return present

    def missing_road_types(self) -> list[RoadType]:
        return [rt for rt, ok in self.coverage().items() if not ok]


def normalize_direction(tag: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", tag.strip().lower()).strip("-")


def _parse_meta_header(path: Path) -> dict[str, str]:
    """Parse the entry's key = value header file."""
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise KnowledgeBaseError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip().lower()] = value.strip().strip("'\"")
    return values


def load_knowledge_base(directory: Path) -> KnowledgeBase:
    """Load every entry directory under ``directory`` into an indexed store.

    An entry directory holds ``meta.toml`` (road_type plus optional
    direction_key), ``template.md``, ``example_summary.txt``, and an optional
    ``example_sketch.png``. Coverage of the five road types is reported by the
    returned store; a sparse or empty store loads fine, lookups on the missing
    types fail.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise KnowledgeBaseError(f"knowledge base directory not found: {directory}")
    entries: dict[tuple[RoadType, str | None], KnowledgeEntry] = {}
    for sub in sorted(p for p in directory.iterdir() if p.is_dir()):
        header_file = sub / "meta.toml"
        template_file = sub / "template.md"
        summary_file = sub / "example_summary.txt"
        if not header_file.is_file():
            raise KnowledgeBaseError(f"{sub}: missing meta.toml")
        header = _parse_meta_header(header_file)
        if "road_type" not in header:
            raise KnowledgeBaseError(f"{header_file}: missing road_type")
        try:
            road_type = RoadType.parse(header["road_type"])
        except ValueError as exc:
            raise KnowledgeBaseError(f"{header_file}: {exc}") from None
        direction_key = header.get("direction_key") or None
        if direction_key:
            direction_key = normalize_direction(direction_key)

        if not template_file.is_file():
            raise KnowledgeBaseError(f"{sub}: missing template.md")
        template = template_file.read_text()
        for section in TEMPLATE_REQUIRED_SECTIONS:
            if section not in template:
                raise KnowledgeBaseError(
                    f"{template_file}: missing mandatory template section {section!r}")
        if not summary_file.is_file():
            raise KnowledgeBaseError(f"{sub}: missing example_summary.txt")

        sketch_path = sub / "example_sketch.png"
        if sketch_path.is_file():
            if sketch_path.stat().st_size == 0:
                raise KnowledgeBaseError(f"{sketch_path}: unreadable sketch (empty file)")
        else:
            sketch_path = None

        key = (road_type, direction_key)
        if key in entries:
            raise KnowledgeBaseError(
                f"{sub}: duplicate knowledge base key "
                f"({road_type.value}, {direction_key or 'none'})")
        entries[key] = KnowledgeEntry(
            road_type=road_type,
            direction_key=direction_key,
            example_summary=summary_file.read_text(),
            example_sketch_path=sketch_path,
            analysis_template=template,
            dsl_reference=dsl_grammar_text(road_type),
        )
    return KnowledgeBase(entries=entries, source_dir=directory)


def index_lookup(kb: KnowledgeBase, meta: MetaMessage) -> KnowledgeEntry:
    """Fetch the template entry for a meta message.

    The primary key is the road type; a direction-specific entry is preferred
    when its tag matches one of the meta message's driving directions,
    otherwise the road-type-only entry is returned.
    """
    kb.access_count += 1
    for direction in meta.driving_directions:
        entry = kb.entries.get((meta.road_type, normalize_direction(direction)))
        if entry is not None:
            return entry
    entry = kb.entries.get((meta.road_type, None))
    if entry is not None:
        return entry
    # any entry of the road type beats a hard failure
    for (road_type, _), candidate in sorted(
            kb.entries.items(), key=lambda kv: (kv[0][0].value, kv[0][1] or "")):
        if road_type is meta.road_type:
            return candidate
    raise KnowledgeBaseError(
        f"no knowledge base entry for road type {meta.road_type.value}")


def default_kb_dir() -> Path:
    return Path(__file__).parent / "data" / "kb"


# ---------------------------------------------------------------------------
# prompt assembly


_META_TASK_TEXT = f"""\
1. Dataset Description:
(1) Crash Sketch: an image depicting the road network, the vehicles involved, \
and their trajectories up to the point of impact.
(2) Crash Summary: a text account of the road, the vehicles, their movements, \
and the environmental conditions.

2. Task Definition:
(1) Extract the road network: identify the type of road where the crash occurred.
(2) Identify the driving direction of each traffic actor.

3. Analysis Steps:
### Step 1. Extract the road network
#### Step 1.1 Read the crash summary to identify the content that describes the road segment.
#### Step 1.2 Determine the road type based on the description.
### Step 2. Extract the number of cars involved in the crash.
### Step 3. Determine the initial driving direction of the cars.

4. Output Format:
{META_OUTPUT_FORMAT}"""

_META_WORKED_EXAMPLE = """\
Example case:
Summary: "A sedan was northbound on a two-lane city street approaching a \
four-way signalized junction. A delivery van was westbound on the crossing \
street. The sedan entered on a green light while the van failed to stop, and \
the vehicles collided in the middle of the junction."
Sketch: shows two perpendicular roadways crossing, one vehicle approaching \
from the south and one from the east.

Analysis Process:
Step 1. The summary and sketch both describe two roadways crossing at a \
four-way junction, so the road type is Intersection.
Step 2. Two vehicles are involved in the crash.
Step 3. The sedan travels from the south heading north (S2N); the van travels \
from the east heading west (E2W).

{'Road type': 'Intersection', 'Number of cars': 2, 'Driving direction': ['S2N', 'E2W']}"""


def _new_case_message(report: CrashReport) -> tuple[ChatMessage, bool]:
    parts: list[ChatPart] = []
    degraded = report.sketch is None
    if not degraded:
        parts.append(image_part(report.sketch, report.sketch_media_type))
    parts.append(text_part(f"New case summary:\n{report.summary}"))
    return ChatMessage(role="user", parts=tuple(parts)), degraded


def build_meta_prompts(report: CrashReport) -> PromptBundle:
    """Assemble the meta-message extraction bundle for one crash report."""
    if not report.summary.strip():
        raise ValueError("report summary must be non-empty")
    new_case, degraded = _new_case_message(report)
    bundle = PromptBundle(
        messages=(
            ChatMessage("system", (text_part(META_SYSTEM_PERSONA),)),
            ChatMessage("user", (text_part(_META_TASK_TEXT),)),
            ChatMessage("assistant", (text_part(ACK_ASK_FOR_EXAMPLE_META),)),
            ChatMessage("user", (text_part(_META_WORKED_EXAMPLE),)),
            ChatMessage("assistant", (text_part(ACK_READY_FOR_NEW_CASE),)),
            new_case,
        ),
        degraded_missing_sketch=degraded,
    )
    bundle.check()
    return bundle


OUTPUT_SKELETON = """\
<Scenario>:
    <Road network>:
        <Road type>: <your answer>
        <No. lanes>: <your answer>
        <Stem direction>: <your answer, or Not applicable>
    <Actors>:
        <Vehicle_1>:
            <Model>: <your answer>
            <Initial_position>: <your answer>
            <Actions>: <your answer>
            <Speed_limit>: <your answer>
        (repeat <Vehicle_n> for every vehicle, numbered in order)
    <Env>:
        <Time>: <your answer>
        <Weather>: <your answer>"""


def build_extraction_prompts(report: CrashReport, entry: KnowledgeEntry,
                             expected_road_type: RoadType | None = None) -> PromptBundle:
    """Assemble the scenario extraction bundle from a retrieved template entry."""
    warnings: list[str] = []
    if expected_road_type is not None and entry.road_type is not expected_road_type:
        warnings.append(
            f"retrieved entry is for {entry.road_type.value} roads but the case "
            f"was classified as {expected_road_type.value}")

    task_text = (
        "Data & Task: Extract scenario representations from crash reports "
        "according to the keys in the DSL.\n\n"
        f"DSL reference for this road type:\n{entry.dsl_reference}\n"
        f"Output format:\n{OUTPUT_SKELETON}\n\n"
        "Example input:\n"
        f"Crash summary - \"{entry.example_summary.strip()}\"\n"
        "Crash sketch - an image of the scene (provided with the analysis below).\n"
        "Example output: a scenario block following the output format, with every "
        "<your answer> filled from the report.")

    analysis_parts: list[ChatPart] = []
    sketch = entry.example_sketch_bytes()
    if sketch is not None:
        analysis_parts.append(image_part(sketch, "image/png"))
    analysis_parts.append(text_part(
        f"Example case summary:\n{entry.example_summary.strip()}\n\n"
        f"{entry.analysis_template.strip()}"))

    new_case, degraded = _new_case_message(report)
    bundle = PromptBundle(
        messages=(
            ChatMessage("system", (text_part(EXTRACTION_SYSTEM_PERSONA),)),
            ChatMessage("user", (text_part(task_text),)),
            ChatMessage("assistant", (text_part(ACK_ASK_FOR_EXAMPLE_EXTRACTION),)),
            ChatMessage("user", tuple(analysis_parts)),
            ChatMessage("assistant", (text_part(ACK_READY_FOR_NEW_CASE),)),
            new_case,
        ),
        degraded_missing_sketch=degraded,
        warnings=tuple(warnings),
    )
    bundle.check()
    return bundle
