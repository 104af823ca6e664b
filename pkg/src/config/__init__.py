# src/config/__init__.py

from .settings import Settings
from .tolerances import DtypeTolerances
from .suite import SCENARIOS, StandardFamilies, StandardItems, default_manifest, standard_registry

__all__ = [
    'Settings',
    'DtypeTolerances',
    'SCENARIOS',
    'StandardFamilies',
    'StandardItems',
    'default_manifest',
    'standard_registry',
]
