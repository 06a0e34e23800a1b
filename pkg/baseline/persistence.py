import json
from pathlib import Path
from typing import Any

from baseline.gbdt import SCHEMA_VERSION, GbdtModel
from baseline.tree import RegressionTree
from services.errors import SchemaVersionMismatch


def model_to_document(model: GbdtModel) -> dict[str, Any]:
    """JSON document with trees as nested split/leaf records."""
    document = model.model_dump(mode="json", exclude={"trees"})
    document["trees"] = [tree.to_record() for tree in model.trees]
    return document


def model_from_document(document: dict[str, Any]) -> GbdtModel:
    """
    Rebuild a model from its JSON document.

    Raises
    ------
    SchemaVersionMismatch
        If the document was written by another schema version.
    """
    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"Model schema version {version} is not supported (expected {SCHEMA_VERSION})",
            {"found": version, "expected": SCHEMA_VERSION},
        )
    payload = {key: value for key, value in document.items() if key != "trees"}
    payload["trees"] = [RegressionTree.from_record(record) for record in document.get("trees", [])]
    return GbdtModel.model_validate(payload)


def save_model(model: GbdtModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(model_to_document(model), handle, sort_keys=True, separators=(",", ":"))
    return path


def load_model(path: Path) -> GbdtModel:
    with open(path, "r", encoding="utf-8") as handle:
        return model_from_document(json.load(handle))
