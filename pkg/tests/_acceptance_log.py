"""One line per acceptance criterion, collected during the run and printed at the end."""
ACCEPTANCE_LINES = []


def record(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line
