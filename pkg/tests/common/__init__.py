# tests/common/__init__.py

# This file makes the 'tests/common' directory a Python package.
