"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS = []


def record(name, passed, detail=""):
    line = f"{name}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f" | {detail}"
    RESULTS.append(line)
    print(line)
    return passed
