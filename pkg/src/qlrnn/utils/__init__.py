# ABOUTME: Utility package for qlrnn
# ABOUTME: Logging configuration and run metric logs

"""
qlrnn utilities package.

Shared utilities:
    - logging.py: structlog configuration, run ids, per-epoch metrics logs
"""
