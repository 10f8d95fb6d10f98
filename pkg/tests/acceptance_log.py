"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    LINES.append(line)
    print(line)
