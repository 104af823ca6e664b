# src/utils/records_helper.py

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import structlog

from src.core.errors import ManifestError, RecordsFormatError, RoutingError, ValidationError
from src.core.models import (
    BenchmarkItem,
    CaptureBundle,
    FamilySpec,
    RunRecord,
    ScoreCard,
    ThresholdManifest,
)
from src.core.registry import Registry, validate_registry
from src.metrics.routing import ExpertLoad

logger = structlog.get_logger()

RECORDS = 'fk-records/1'
MANIFEST = 'fk-manifest/1'
CAPTURE = 'fk-capture/1'
SCORECARD = 'fk-scorecard/1'

PathLike = Union[str, Path]

# construction failures that mean the document itself is bad
_DOC_ERRORS = (KeyError, TypeError, ValueError, ValidationError, ManifestError, RoutingError)


def encode_line(schema: str, doc: Mapping[str, Any]) -> str:
    """one document per line; sorted keys keep output byte-identical"""
    return json.dumps({'schema': schema, **doc}, sort_keys=True, separators=(',', ':'))


def decode_line(line: str, schema: Optional[str] = None) -> Dict[str, Any]:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as e:
        raise RecordsFormatError(f"not a JSON document: {e}")
    if not isinstance(doc, dict) or 'schema' not in doc:
        raise RecordsFormatError('document lacks a schema field')
    if schema is not None and doc['schema'] != schema:
        raise RecordsFormatError(f"expected {schema}, got {doc['schema']}")
    return doc


def _strip(doc: Mapping[str, Any], *keys: str) -> Dict[str, Any]:
    return {k: v for k, v in doc.items() if k not in ('schema',) + keys}


class RecordsHelper:
    """reads and writes the line-delimited fk-* documents on local disk"""

    def __init__(self, base_dir: Optional[PathLike] = None):
        self.base_dir = Path(base_dir) if base_dir is not None else None

    def _path(self, path: PathLike) -> Path:
        path = Path(path)
        return self.base_dir / path if self.base_dir is not None and not path.is_absolute() else path

    def write_documents(self, path: PathLike, schema: str, docs: Iterable[Mapping[str, Any]]) -> Path:
        target = self._path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            lines = [encode_line(schema, doc) for doc in docs]
            target.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')
            logger.info("wrote documents", path=str(target), schema=schema, count=len(lines))
            return target
        except OSError as e:
            logger.error("failed to write documents", error=str(e), path=str(target))
            raise

    def read_documents(self, path: PathLike, schema: Optional[str] = None) -> List[Dict[str, Any]]:
        source = self._path(path)
        try:
            text = source.read_text(encoding='utf-8')
        except OSError as e:
            logger.error("failed to read documents", error=str(e), path=str(source))
            raise RecordsFormatError(f"cannot read {source}: {e}")
        docs = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                docs.append(decode_line(line, schema))
            except RecordsFormatError as e:
                logger.error("malformed document", path=str(source), line=lineno, error=str(e))
                raise RecordsFormatError(f"{source}:{lineno}: {e}")
        logger.debug("read documents", path=str(source), count=len(docs))
        return docs

    # --- typed documents ---------------------------------------------------

    def write_records(self, path: PathLike, records: Sequence[RunRecord],
                      registry: Optional[Registry] = None) -> Path:
        docs = []
        if registry is not None:
            docs += [{'type': 'family', **registry.families[f].to_dict()} for f in registry.family_ids()]
            docs += [{'type': 'item', **registry.items[i].to_dict()} for i in registry.item_ids()]
        docs += [{'type': 'run-record', **r.to_dict()} for r in records]
        return self.write_documents(path, RECORDS, docs)

    def read_records(self, path: PathLike) -> Tuple[List[RunRecord], Optional[Registry]]:
        """run records, plus the registry if the file embeds one"""
        families, items, records = [], [], []
        for doc in self.read_documents(path, RECORDS):
            kind = doc.get('type')
            try:
                if kind == 'run-record':
                    records.append(RunRecord.from_dict(_strip(doc, 'type')))
                elif kind == 'family':
                    families.append(FamilySpec.from_dict(doc))
                elif kind == 'item':
                    items.append(BenchmarkItem.from_dict(doc))
            except _DOC_ERRORS as e:
                raise RecordsFormatError(f"bad {kind} document in {path}: {e}")
        registry = validate_registry(families, items) if items else None
        return records, registry

    def write_manifest(self, path: PathLike, manifest: ThresholdManifest) -> Path:
        return self.write_documents(path, MANIFEST, [manifest.to_dict()])

    def read_manifest(self, path: PathLike) -> ThresholdManifest:
        docs = self.read_documents(path, MANIFEST)
        if len(docs) != 1:
            raise RecordsFormatError(f"{path} must hold exactly one manifest, found {len(docs)}")
        try:
            return ThresholdManifest.from_dict(_strip(docs[0]))
        except _DOC_ERRORS as e:
            raise RecordsFormatError(f"bad manifest in {path}: {e}")

    def write_bundles(self, path: PathLike, bundles: Sequence[CaptureBundle]) -> Path:
        return self.write_documents(path, CAPTURE, [b.to_dict() for b in bundles])

    def read_bundles(self, path: PathLike) -> List[CaptureBundle]:
        try:
            return [CaptureBundle.from_dict(_strip(d)) for d in self.read_documents(path, CAPTURE)]
        except _DOC_ERRORS as e:
            raise RecordsFormatError(f"bad capture bundle in {path}: {e}")

    def write_scorecards(self, path: PathLike, cards: Sequence[ScoreCard]) -> Path:
        ordered = sorted(cards, key=lambda c: c.agent_id)
        return self.write_documents(path, SCORECARD, [c.to_dict() for c in ordered])

    def read_scorecards(self, path: PathLike) -> List[ScoreCard]:
        try:
            return [ScoreCard.from_dict(_strip(d)) for d in self.read_documents(path, SCORECARD)]
        except _DOC_ERRORS as e:
            raise RecordsFormatError(f"bad scorecard in {path}: {e}")

    def write_loads(self, path: PathLike, loads: Sequence[ExpertLoad]) -> Path:
        return self.write_documents(path, RECORDS, [{'type': 'expert-load', **load.to_dict()} for load in loads])
