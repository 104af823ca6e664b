# src/harness/__init__.py
