"""
Chrome Trace Event Format codec.

On disk: a JSON array (or ``{"traceEvents": [...]}``) of records with ``ts``
and ``dur`` in microseconds. In memory: integer nanoseconds. Files ending in
``.gz`` (or starting with the gzip magic) are transparently decompressed.
"""

import gzip
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Iterator

from pydantic import ValidationError

from services.errors import MalformedEvent
from tracing.events import Category, Collector, EventKind, SourceId, TraceEvent, sort_events

GZIP_MAGIC = b"\x1f\x8b"

PHASE_TO_KIND = {
    "X": EventKind.SPAN,
    "i": EventKind.INSTANT,
    "I": EventKind.INSTANT,
    "C": EventKind.COUNTER,
    "s": EventKind.FLOW,
    "f": EventKind.FLOW,
}

# Category spellings emitted by common profilers
CATEGORY_ALIASES = {
    "python_function": Category.PYTHON_CALL,
    "user_annotation": Category.PYTHON_CALL,
    "cpu_op": Category.PYTHON_CALL,
    "cuda_runtime": Category.RUNTIME_API,
    "cuda_driver": Category.RUNTIME_API,
    "kernel": Category.GPU_KERNEL,
    "gpu_memcpy": Category.MEM_COPY,
    "gpu_memset": Category.MEM_COPY,
}

DEFAULT_SOURCE = SourceId(node="localhost", collector=Collector.APP_TRACER, clock_domain="host")


def flatten_args(raw: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    """
    Flatten nested argument structures into dotted scalar keys.

    Parameters
    ----------
    raw : dict[str, Any]
        Arguments as found in the trace record.
    prefix : str, optional
        Key prefix used during recursion.

    Returns
    -------
    dict[str, Any]
        Mapping from dotted key to str, int, float or bool.

    Raises
    ------
    ValueError
        If a value is null or of an unsupported type.
    """
    flat: dict[str, Any] = {}
    for key, value in raw.items():
        full_key = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_args(value, f"{full_key}."))
        elif isinstance(value, list):
            flat.update(flatten_args({str(i): v for i, v in enumerate(value)}, f"{full_key}."))
        elif isinstance(value, (str, bool, int, float)):
            flat[full_key] = value
        else:
            raise ValueError(f"arg '{full_key}' has unsupported value {value!r}")
    return flat


def _us_to_ns(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValueError(f"timestamp {value!r} is not a finite number")
    return int(round(value * 1000))


def _ns_to_us(value: int) -> float:
    return value / 1000


class TraceDecoder:
    """
    Stateful record decoder.

    Holds the declared sources and the id counter for records that carry no
    explicit ``eid``. One decoder per trace file.
    """

    def __init__(self) -> None:
        self.sources: dict[int, SourceId] = {}
        self._next_id = 0
        self._seen_ids: set[int] = set()

    def declare(self, record: dict[str, Any]) -> None:
        args = record.get("args", {})
        self.sources[int(args["index"])] = SourceId(
            node=str(args["node"]),
            collector=Collector(args["collector"]),
            clock_domain=str(args["clock_domain"]),
        )

    @staticmethod
    def _foreign_correlation(record: dict[str, Any], args: dict[str, Any], kind: EventKind, phase: str) -> int | None:
        """
        Correlation id of a record from another profiler.

        Falls back from ``corr`` to an integral ``args.correlation`` and, for
        flows, to the flow ``id``. A flow end gains ``flow_phase`` so it is
        written back as an end.
        """
        correlation_id = record.get("corr")
        raw = args.get("correlation")
        if correlation_id is None and isinstance(raw, int) and not isinstance(raw, bool):
            correlation_id = raw
        if kind is EventKind.FLOW:
            if phase == "f":
                args.setdefault("flow_phase", "end")
            if correlation_id is None and "id" in record:
                correlation_id = int(record["id"])
        return correlation_id

    def decode(self, record: Any, byte_offset: int | None = None) -> TraceEvent | None:
        """
        Decode one record.

        Returns
        -------
        TraceEvent | None
            The event, or None for metadata records.

        Raises
        ------
        MalformedEvent
            If the record cannot be turned into a valid TraceEvent.
        """
        try:
            if not isinstance(record, dict):
                raise ValueError("record is not a JSON object")
            phase = record.get("ph")
            if phase == "M":
                if record.get("name") == "source":
                    self.declare(record)
                return None
            if phase not in PHASE_TO_KIND:
                raise ValueError(f"unsupported phase {phase!r}")
            kind = PHASE_TO_KIND[phase]

            raw_cat = record.get("cat", Category.COUNTER_TELEMETRY.value if kind is EventKind.COUNTER else None)
            if raw_cat in CATEGORY_ALIASES:
                category = CATEGORY_ALIASES[raw_cat]
            else:
                category = Category(raw_cat)

            if "src" in record:
                index = int(record["src"])
                if index not in self.sources:
                    raise ValueError(f"record references undeclared source {index}")
                source = self.sources[index]
            else:
                source = DEFAULT_SOURCE

            args = flatten_args(record.get("args") or {})
            correlation_id = record.get("corr")
            # Records written by this codec carry eid and are taken as is
            if "eid" not in record:
                correlation_id = self._foreign_correlation(record, args, kind, phase)

            if "eid" in record:
                event_id = int(record["eid"])
            else:
                while self._next_id in self._seen_ids:
                    self._next_id += 1
                event_id = self._next_id
            if event_id in self._seen_ids:
                raise ValueError(f"duplicate event id {event_id}")
            self._seen_ids.add(event_id)

            return TraceEvent(
                event_id=event_id,
                kind=kind,
                name=str(record["name"]),
                category=category,
                source=source,
                start_ts=_us_to_ns(record["ts"]),
                duration=_us_to_ns(record["dur"]) if kind is EventKind.SPAN else None,
                track=(int(record.get("pid", 0)), int(record.get("tid", 0))),
                correlation_id=correlation_id,
                args=args,
                calibrated=bool(record.get("cal", False)),
            )
        except (KeyError, TypeError, ValueError, ValidationError) as exc:
            raise MalformedEvent(f"Malformed trace record: {exc}", byte_offset=byte_offset) from exc


def _open_text(path: Path) -> str:
    raw = Path(path).read_bytes()
    if Path(path).suffix == ".gz" or raw[:2] == GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return raw.decode("utf-8")


def iter_records(text: str) -> Iterator[tuple[int, Any]]:
    """
    Stream records out of a JSON trace document.

    Parameters
    ----------
    text : str
        The whole document.

    Yields
    ------
    tuple[int, Any]
        (byte offset of the record, decoded JSON value). A record that is
        not valid JSON yields a MalformedEvent in place of the value and
        stops the stream.
    """
    decoder = json.JSONDecoder()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        document = json.loads(text)
        for record in document.get("traceEvents", []):
            yield -1, record
        return

    pos = text.find("[")
    if pos < 0:
        if text.strip():
            yield 0, MalformedEvent("Trace document is not a JSON array", byte_offset=0)
        return
    pos += 1
    byte_offset = len(text[:pos].encode("utf-8"))
    length = len(text)
    while pos < length:
        # Skip whitespace and separators between records
        start = pos
        while pos < length and text[pos] in " \t\r\n,":
            pos += 1
        byte_offset += len(text[start:pos].encode("utf-8"))
        if pos >= length or text[pos] == "]":
            return
        try:
            record, end = decoder.raw_decode(text, pos)
        except json.JSONDecodeError as exc:
            yield byte_offset, MalformedEvent(f"Unparseable record: {exc.msg}", byte_offset=byte_offset)
            return
        yield byte_offset, record
        byte_offset += len(text[pos:end].encode("utf-8"))
        pos = end


def decode_stream(text: str) -> Iterator[TraceEvent | MalformedEvent]:
    """
    Decode every record of a document, yielding errors in place.

    Validation consumes this stream so that a malformed record never
    aborts the scan.
    """
    decoder = TraceDecoder()
    for offset, record in iter_records(text):
        if isinstance(record, MalformedEvent):
            yield record
            continue
        try:
            event = decoder.decode(record, byte_offset=None if offset < 0 else offset)
        except MalformedEvent as exc:
            yield exc
            continue
        if event is not None:
            yield event


def parse_trace(text: str) -> list[TraceEvent]:
    """
    Parse a trace document strictly.

    Returns
    -------
    list[TraceEvent]
        Events ordered by (start_ts, event_id).

    Raises
    ------
    MalformedEvent
        On the first record that cannot be decoded.
    """
    events: list[TraceEvent] = []
    for item in decode_stream(text):
        if isinstance(item, MalformedEvent):
            raise item
        events.append(item)
    return sort_events(events)


def read_trace(path: Path) -> list[TraceEvent]:
    """Read and strictly parse a trace file (plain or gzip)."""
    return parse_trace(_open_text(Path(path)))


def read_trace_text(path: Path) -> str:
    return _open_text(Path(path))


def event_to_record(event: TraceEvent, source_index: int) -> dict[str, Any]:
    """Render one event as a Chrome trace record."""
    if event.kind is EventKind.FLOW:
        phase = "f" if event.args.get("flow_phase") == "end" else "s"
    else:
        phase = {EventKind.SPAN: "X", EventKind.INSTANT: "i", EventKind.COUNTER: "C"}[event.kind]

    record: dict[str, Any] = {
        "ph": phase,
        "name": event.name,
        "cat": event.category.value,
        "ts": _ns_to_us(event.start_ts),
    }
    if event.duration is not None:
        record["dur"] = _ns_to_us(event.duration)
    record["pid"] = event.track[0]
    record["tid"] = event.track[1]
    record["eid"] = event.event_id
    record["src"] = source_index
    if event.correlation_id is not None:
        record["corr"] = event.correlation_id
        if event.kind is EventKind.FLOW:
            record["id"] = event.correlation_id
    if event.calibrated:
        record["cal"] = True
    record["args"] = {key: event.args[key] for key in sorted(event.args)}
    return record


def serialize(events: Iterable[TraceEvent]) -> list[dict[str, Any]]:
    """
    Render events as Chrome trace records, source declarations first.

    Output is deterministic: sources ordered by (node, collector, clock
    domain), events by (start_ts, event_id), args by key.
    """
    ordered = sort_events(events)
    sources = sorted({event.source for event in ordered}, key=SourceId.sort_key)
    index = {source: i for i, source in enumerate(sources)}
    records: list[dict[str, Any]] = [
        {
            "ph": "M",
            "name": "source",
            "pid": 0,
            "tid": 0,
            "args": {
                "index": i,
                "node": source.node,
                "collector": source.collector.value,
                "clock_domain": source.clock_domain,
            },
        }
        for i, source in enumerate(sources)
    ]
    records.extend(event_to_record(event, index[event.source]) for event in ordered)
    return records


def dumps(events: Iterable[TraceEvent]) -> str:
    """Serialize events to a compact JSON array, one record per line."""
    buffer = io.StringIO()
    buffer.write("[\n")
    records = serialize(events)
    for i, record in enumerate(records):
        buffer.write(json.dumps(record, separators=(",", ":"), ensure_ascii=False))
        buffer.write(",\n" if i < len(records) - 1 else "\n")
    buffer.write("]\n")
    return buffer.getvalue()


def write_trace(path: Path, events: Iterable[TraceEvent]) -> Path:
    """
    Write events to ``path``; gzip when the name ends with ``.gz``.

    The gzip header carries no timestamp, so identical events give
    byte-identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dumps(events).encode("utf-8")
    if path.suffix == ".gz":
        with open(path, "wb") as raw:
            with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as handle:
                handle.write(payload)
    else:
        path.write_bytes(payload)
    return path


def round_trip(events: Iterable[TraceEvent]) -> list[TraceEvent]:
    """Serialize then parse; identity for every valid trace."""
    return parse_trace(dumps(events))
