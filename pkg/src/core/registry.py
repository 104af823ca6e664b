# src/core/registry.py

from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, List, Mapping

import structlog

from src.core.errors import RegistryError
from src.core.models import BenchmarkItem, FamilySpec

logger = structlog.get_logger()


@dataclass(frozen=True)
class Registry:
    """immutable view over validated families and items"""
    families: Mapping[str, FamilySpec]
    items: Mapping[str, BenchmarkItem]

    def family_of(self, item_id: str) -> FamilySpec:
        return self.families[self.item(item_id).family_id]

    def item(self, item_id: str) -> BenchmarkItem:
        try:
            return self.items[item_id]
        except KeyError:
            raise RegistryError('unknown-item', f"item {item_id} is not registered")

    def items_in(self, family_id: str) -> List[BenchmarkItem]:
        return [self.items[i] for i in sorted(self.items) if self.items[i].family_id == family_id]

    def family_ids(self) -> List[str]:
        return sorted(self.families)

    def item_ids(self) -> List[str]:
        return sorted(self.items)


def validate_registry(families: Iterable[FamilySpec], items: Iterable[BenchmarkItem]) -> Registry:
    family_map = {}
    for family in families:
        if family.family_id in family_map:
            raise RegistryError('duplicate-id', f"family {family.family_id} registered twice")
        family_map[family.family_id] = family

    item_map = {}
    for item in items:
        if item.item_id in item_map:
            raise RegistryError('duplicate-id', f"item {item.item_id} registered twice")
        if item.family_id not in family_map:
            raise RegistryError('dangling-family-reference',
                                f"item {item.item_id} references unknown family {item.family_id}")
        if not item.scenario_ids:
            raise RegistryError('empty-scenario-list', f"item {item.item_id} has no scenarios")
        item_map[item.item_id] = item

    logger.debug("validated registry", family_count=len(family_map), item_count=len(item_map))
    return Registry(families=MappingProxyType(family_map), items=MappingProxyType(item_map))
