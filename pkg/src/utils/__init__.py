# src/utils/__init__.py

from .records_helper import RecordsHelper

__all__ = ['RecordsHelper']
