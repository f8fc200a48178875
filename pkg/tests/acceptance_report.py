"""Collects one result line per acceptance criterion for the terminal summary."""
RESULTS: list[str] = []


def report(number: int, title: str, passed: bool | None, detail: str) -> str:
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"[{status}] {number}. {title}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return line
