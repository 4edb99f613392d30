# sim/__init__.py
