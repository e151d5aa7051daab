"""Collects one verdict line per acceptance criterion for the end-of-run summary."""

LINES: dict = {}


def verdict(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    LINES[number] = line
    print(line)
    return passed
