# src/metrics/__init__.py
