# src/utils/table_helper.py

from typing import Any, Dict, Iterable, List, Mapping, Sequence

import pandas as pd
import structlog

from src.core.models import ScoreCard

logger = structlog.get_logger()

LEADERBOARD_COLUMNS = [
    'agent',
    'S_macro(λ=0)',
    'S_macro(λ=0.5)',
    'S_macro(λ=1)',
    'C_macro',
    'Coverage',
    'Coverage_macro',
    'Score_default',
    'fast@1',
    'fast@1.5',
]


def emit_leaderboard(cards: Sequence[ScoreCard]) -> pd.DataFrame:
    """one row per agent, best Score_default first, ties by agent id"""
    rows = [{
        'agent': c.agent_id,
        'S_macro(λ=0)': c.s_macro(0.0),
        'S_macro(λ=0.5)': c.s_macro(0.5),
        'S_macro(λ=1)': c.s_macro(1.0),
        'C_macro': c.c_macro,
        'Coverage': c.coverage_item,
        'Coverage_macro': c.coverage_macro,
        'Score_default': c.score_default,
        'fast@1': c.fast_at_1,
        'fast@1.5': c.fast_at_1_5,
    } for c in cards]
    frame = pd.DataFrame(rows, columns=LEADERBOARD_COLUMNS)
    frame = frame.sort_values(['Score_default', 'agent'], ascending=[False, True], kind='mergesort')
    return frame.reset_index(drop=True)


def family_frame(card: ScoreCard) -> pd.DataFrame:
    rows = []
    for family_id in sorted(card.per_family):
        fb = card.per_family[family_id]
        ci = (card.ci_by_family or {}).get(family_id)
        rows.append({
            'family': family_id,
            'items': fb.item_count,
            'valid': fb.valid_count,
            'C_f': fb.c_f,
            'Coverage_f': fb.coverage_f,
            'S_f': fb.s_f,
            'ci_lo': ci[0] if ci else None,
            'ci_hi': ci[1] if ci else None,
        })
    return pd.DataFrame(rows, columns=['family', 'items', 'valid', 'C_f', 'Coverage_f', 'S_f', 'ci_lo', 'ci_hi'])


def records_frame(rows: Iterable[Mapping[str, Any]], columns: List[str]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=columns)


def sweep_frame(sweep_rows) -> pd.DataFrame:
    rows = []
    for row in sweep_rows:
        entry: Dict[str, Any] = {'scale': row.scale}
        for level in sorted(row.total_by_level):
            entry[f"L{level} correct"] = f"{row.correct_by_level[level]}/{row.total_by_level[level]}"
            entry[f"L{level} geomean"] = row.geomean_by_level[level]
        entry['all correct'] = f"{row.correct}/{row.total}"
        entry['all geomean'] = row.geomean
        rows.append(entry)
    return pd.DataFrame(rows)


def render(frame: pd.DataFrame, precision: int = 3) -> str:
    """tab-separated text, fixed decimals for real-valued cells"""
    return frame.to_csv(sep='\t', index=False, float_format=f"%.{precision}f", na_rep='-', lineterminator='\n')
