# perception/__init__.py
