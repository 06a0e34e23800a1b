from typing import Iterable

from pydantic import BaseModel, Field

from services.errors import ConflictingTopology
from tracing.events import Category, TraceEvent


class DeviceRef(BaseModel):
    model_config = {"frozen": True}

    node: str
    device: str

    def label(self) -> str:
        return f"{self.node}/{self.device}"


def _device_label(raw: object) -> str:
    text = str(raw)
    return text if not text.lstrip("-").isdigit() else f"gpu{text}"


class TopologyMap(BaseModel):
    """
    Mapping from logical collective ranks to physical devices.

    Keys are ``"<commHash>:<rank>"`` strings so the map serializes as JSON;
    use ``lookup`` and ``insert`` rather than the raw dict.
    """

    entries: dict[str, DeviceRef] = Field(default_factory=dict)

    @staticmethod
    def key(comm_hash: str, rank: int) -> str:
        return f"{comm_hash}:{rank}"

    def insert(self, comm_hash: str, rank: int, ref: DeviceRef) -> None:
        """
        Insert a mapping; re-inserting an identical entry is a no-op.

        Raises
        ------
        ConflictingTopology
            If (comm_hash, rank) already maps to another device.
        """
        key = self.key(comm_hash, rank)
        existing = self.entries.get(key)
        if existing is not None and existing != ref:
            raise ConflictingTopology(
                f"({comm_hash}, {rank}) maps to both {existing.label()} and {ref.label()}",
                {"comm_hash": comm_hash, "rank": rank, "old": existing.label(), "new": ref.label()},
            )
        self.entries[key] = ref

    def lookup(self, comm_hash: str, rank: int) -> DeviceRef | None:
        return self.entries.get(self.key(comm_hash, rank))

    def reverse(self) -> dict[str, list[tuple[str, int]]]:
        """(node/device label) -> sorted list of (commHash, rank)."""
        index: dict[str, list[tuple[str, int]]] = {}
        for key, ref in self.entries.items():
            comm_hash, rank = key.rsplit(":", 1)
            index.setdefault(ref.label(), []).append((comm_hash, int(rank)))
        return {label: sorted(members) for label, members in sorted(index.items())}

    def group(self, comm_hash: str) -> list[int]:
        return sorted(int(k.rsplit(":", 1)[1]) for k in self.entries if k.rsplit(":", 1)[0] == comm_hash)

    def __len__(self) -> int:
        return len(self.entries)


def resolve_topology(events: Iterable[TraceEvent]) -> TopologyMap:
    """
    Build (commHash, rank) -> (node, device) from CollectiveComm events.

    The ``node`` arg wins over ``hostname`` when both are present. The
    result is independent of event order: entries are inserted in sorted
    key order and conflicts are detected whichever event comes first.
    """
    seen: list[tuple[str, int, DeviceRef]] = []
    for event in events:
        if event.category is not Category.COLLECTIVE_COMM:
            continue
        args = event.args
        if "commHash" not in args or "rank" not in args:
            continue
        node = args.get("node", args.get("hostname", event.source.node))
        device = args.get("device", event.track[1])
        seen.append((str(args["commHash"]), int(args["rank"]), DeviceRef(node=str(node), device=_device_label(device))))

    topology = TopologyMap()
    for comm_hash, rank, ref in sorted(seen, key=lambda item: (item[0], item[1], item[2].node, item[2].device)):
        topology.insert(comm_hash, rank, ref)
    return topology
