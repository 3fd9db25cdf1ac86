"""Critical-raw-material (CRM) accounting over detected board components.

A mapping assigns each detection class to a component category and each
category to the set of CRM elements found in such components. Inventories
count contributing components per element; they are deliberately counts, not
masses. Coil and transformer have no category in the default mapping and are
tallied as unmapped unless a custom mapping assigns them.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Sequence

from .types import CLASS_NAMES, Detection

CRM_ELEMENTS = frozenset(
    {"Ta", "Pd", "Nb", "Ru", "Ga", "Ge", "In", "Sb", "Be", "Ni", "Cu", "Au"}
)

# Categories whose union defines the "ics" entry.
IC_UNION_CATEGORIES = ("capacitors", "resistors", "semiconductors", "transistors")


class MappingError(ValueError):
    """Raised for invalid mapping configurations."""


@dataclass(frozen=True)
class CrmMapping:
    """Component category -> CRM elements, plus class -> category routing."""

    categories: dict[str, frozenset[str]]
    class_to_category: dict[str, str]

    def __post_init__(self) -> None:
        for category, elements in self.categories.items():
            bad = sorted(set(elements) - CRM_ELEMENTS)
            if bad:
                raise MappingError(f"category {category!r}: unknown element symbol(s) {bad}")
        for name, category in self.class_to_category.items():
            if name not in CLASS_NAMES:
                raise MappingError(f"unknown class name {name!r} in mapping")
            if category not in self.categories:
                raise MappingError(f"class {name!r} mapped to undeclared category {category!r}")

    def elements_for_class(self, class_name: str) -> frozenset[str] | None:
        """Element set for a class, or None when the class is unmapped."""
        category = self.class_to_category.get(class_name)
        if category is None:
            return None
        return self.categories[category]


def default_mapping() -> CrmMapping:
    """Built-in component-category composition of PCBs."""
    categories = {
        "capacitors": frozenset({"Ta", "Pd", "Nb"}),
        "resistors": frozenset({"Ru", "Ta"}),
        "semiconductors": frozenset({"Ga", "Ge", "In", "Sb", "Ta"}),
        "transistors": frozenset({"Ga", "Ge"}),
        "connectors": frozenset({"Pd", "Ru", "Be"}),
        "plating": frozenset({"Ni", "Cu", "Au"}),
    }
    categories["ics"] = frozenset().union(*(categories[c] for c in IC_UNION_CATEGORIES))
    class_to_category = {
        "capacitor": "capacitors",
        "electrolytic_capacitor": "capacitors",
        "diode": "semiconductors",
        "transistor": "transistors",
        "resistor": "resistors",
        "ic": "ics",
        # coil and transformer are intentionally unmapped by default
    }
    return CrmMapping(categories, class_to_category)


def load_mapping(config_text: str) -> CrmMapping:
    """Parse a JSON mapping config.

    Schema: ``{"categories": {name: [elements...] | "union"}, "classes":
    {class_name: category}}``. A category declared as ``"union"`` receives the
    union of the capacitors/resistors/semiconductors/transistors entries, which
    must all be present.
    """
    try:
        data = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise MappingError(f"invalid mapping JSON: {exc}") from None
    if not isinstance(data, dict) or "categories" not in data:
        raise MappingError("mapping config must be an object with a 'categories' key")

    raw_categories = data["categories"]
    categories: dict[str, frozenset[str]] = {}
    union_pending: list[str] = []
    for name, value in raw_categories.items():
        if value == "union":
            union_pending.append(name)
        elif isinstance(value, list):
            categories[name] = frozenset(str(symbol) for symbol in value)
        else:
            raise MappingError(f"category {name!r}: expected element list or 'union'")
    for name in union_pending:
        missing = [c for c in IC_UNION_CATEGORIES if c not in categories]
        if missing:
            raise MappingError(f"category {name!r} declared as union, but {missing} undefined")
        categories[name] = frozenset().union(*(categories[c] for c in IC_UNION_CATEGORIES))

    classes = data.get("classes", {})
    if not isinstance(classes, dict):
        raise MappingError("'classes' must map class names to categories")
    return CrmMapping(categories, {str(k): str(v) for k, v in classes.items()})


@dataclass(frozen=True)
class CrmInventory:
    """Per-board (or aggregated) element contributions from detections."""

    boards: tuple[str, ...]
    class_counts: dict[str, int]
    element_counts: dict[str, int]
    element_classes: dict[str, frozenset[str]]
    unmapped_counts: dict[str, int]
    confidence_floor: float
    mapping: CrmMapping = field(repr=False)


def inventory(
    detections: Sequence[Detection],
    mapping: CrmMapping,
    confidence_floor: float = 0.0,
    board_id: str | None = None,
) -> CrmInventory:
    """Count CRM-element contributions of detections at or above the floor."""
    if not 0.0 <= confidence_floor <= 1.0:
        raise ValueError(f"confidence floor {confidence_floor} outside [0, 1]")
    class_counts: dict[str, int] = {}
    element_counts: dict[str, int] = {}
    element_classes: dict[str, set[str]] = {}
    unmapped: dict[str, int] = {}
    for det in detections:
        if det.confidence < confidence_floor:
            continue
        name = det.label.name
        class_counts[name] = class_counts.get(name, 0) + 1
        elements = mapping.elements_for_class(name)
        if elements is None:
            unmapped[name] = unmapped.get(name, 0) + 1
            continue
        for symbol in elements:
            element_counts[symbol] = element_counts.get(symbol, 0) + 1
            element_classes.setdefault(symbol, set()).add(name)
    return CrmInventory(
        boards=(board_id,) if board_id is not None else (),
        class_counts=class_counts,
        element_counts=element_counts,
        element_classes={k: frozenset(v) for k, v in element_classes.items()},
        unmapped_counts=unmapped,
        confidence_floor=confidence_floor,
        mapping=mapping,
    )


def aggregate(inventories: Sequence[CrmInventory]) -> CrmInventory:
    """Element-wise and class-wise sum; requires one shared mapping and floor."""
    if not inventories:
        raise ValueError("nothing to aggregate")
    first = inventories[0]
    for inv in inventories[1:]:
        if inv.mapping != first.mapping:
            raise ValueError("cannot aggregate inventories with different mappings")
        if inv.confidence_floor != first.confidence_floor:
            raise ValueError("cannot aggregate inventories with different confidence floors")
    class_counts: dict[str, int] = {}
    element_counts: dict[str, int] = {}
    element_classes: dict[str, set[str]] = {}
    unmapped: dict[str, int] = {}
    boards: list[str] = []
    for inv in inventories:
        boards.extend(inv.boards)
        for name, count in inv.class_counts.items():
            class_counts[name] = class_counts.get(name, 0) + count
        for symbol, count in inv.element_counts.items():
            element_counts[symbol] = element_counts.get(symbol, 0) + count
        for symbol, names in inv.element_classes.items():
            element_classes.setdefault(symbol, set()).update(names)
        for name, count in inv.unmapped_counts.items():
            unmapped[name] = unmapped.get(name, 0) + count
    return CrmInventory(
        boards=tuple(sorted(set(boards))),
        class_counts=class_counts,
        element_counts=element_counts,
        element_classes={k: frozenset(v) for k, v in element_classes.items()},
        unmapped_counts=unmapped,
        confidence_floor=first.confidence_floor,
        mapping=first.mapping,
    )


def inventory_to_dict(inv: CrmInventory) -> dict[str, Any]:
    return {
        "boards": list(inv.boards),
        "confidence_floor": inv.confidence_floor,
        "class_counts": dict(sorted(inv.class_counts.items())),
        "elements": {
            symbol: {
                "contributing_component_count": inv.element_counts[symbol],
                "contributing_classes": sorted(inv.element_classes[symbol]),
            }
            for symbol in sorted(inv.element_counts)
        },
        "unmapped_class_counts": dict(sorted(inv.unmapped_counts.items())),
    }


def inventory_to_csv(inv: CrmInventory) -> str:
    """CSV rows (element, contributing_component_count, contributing_classes)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["element", "contributing_component_count", "contributing_classes"])
    for symbol in sorted(inv.element_counts):
        writer.writerow(
            [symbol, inv.element_counts[symbol], ";".join(sorted(inv.element_classes[symbol]))]
        )
    return buffer.getvalue()


def mapping_to_dict(mapping: CrmMapping) -> dict[str, Any]:
    return {
        "categories": {name: sorted(elements) for name, elements in sorted(mapping.categories.items())},
        "classes": dict(sorted(mapping.class_to_category.items())),
    }
