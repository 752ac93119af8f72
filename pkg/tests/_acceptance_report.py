"""Shared sink for acceptance-criterion pass/fail lines.

The acceptance tests record one line per criterion here; the conftest hook
echoes them after the run so they are visible even under output capture.
"""

lines: list[str] = []


def record(name: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    lines.append(line)
    print(line)
    return ok
