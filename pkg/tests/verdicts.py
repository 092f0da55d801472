"""One pass/fail line per acceptance criterion, collected for the run summary."""

LINES = {}


def record(name, ok, detail):
    line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
    LINES[name] = line
    print(line)
    return ok
