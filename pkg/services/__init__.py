# services/__init__.py
# 让 services 目录成为 Python 包
