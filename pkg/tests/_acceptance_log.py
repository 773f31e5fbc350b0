"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS: dict[int, tuple[bool, str, str]] = {}


def record(n: int, name: str, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), name, detail)
    print(f"criterion {n} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"criterion {n} ({name}) failed: {detail}"
