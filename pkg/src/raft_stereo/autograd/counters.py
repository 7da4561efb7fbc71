"""Multiply-accumulate accounting for conv/matmul kernels.

Kernels call :func:`record_macs`; nothing is counted unless a
:class:`MacCounter` is active. Counts are attributed to the innermost
``mac_scope`` label so per-stage tables can be built.
"""

from __future__ import annotations

import contextlib
import threading
from collections import defaultdict

_local = threading.local()


class MacCounter:
    def __init__(self):
        self.by_scope: dict = defaultdict(int)

    @property
    def total(self) -> int:
        return sum(self.by_scope.values())

    def __getitem__(self, scope: str) -> int:
        return self.by_scope.get(scope, 0)

    def prefixed(self, prefix: str) -> int:
        return sum(v for k, v in self.by_scope.items() if k == prefix or k.startswith(prefix + "/"))


def _counters() -> list:
    if not hasattr(_local, "counters"):
        _local.counters = []
        _local.scopes = []
    return _local.counters


def _scopes() -> list:
    _counters()
    return _local.scopes


@contextlib.contextmanager
def count_macs():
    counter = MacCounter()
    stack = _counters()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


@contextlib.contextmanager
def mac_scope(name: str):
    scopes = _scopes()
    scopes.append(name)
    try:
        yield
    finally:
        scopes.pop()


def record_macs(n: int) -> None:
    counters = _counters()
    if not counters:
        return
    scopes = _local.scopes
    key = "/".join(scopes) if scopes else "other"
    for c in counters:
        c.by_scope[key] += int(n)
