"""Collects one summary line per acceptance criterion."""
LINES: list[str] = []


def record(number: int, ok: bool, detail: str) -> bool:
    line = f"ACCEPTANCE {number:02d} {'PASS' if ok else 'FAIL'}: {detail}"
    LINES.append(line)
    print(line, flush=True)
    return ok
