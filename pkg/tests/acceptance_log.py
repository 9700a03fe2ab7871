"""Registry of acceptance outcomes, printed as a block at the end of the session."""

RESULTS: dict[int, str] = {}


def record(number: int, ok: bool | None, detail: str) -> bool:
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    line = f"criterion {number:>2}: {status}  {detail}"
    RESULTS[number] = line
    print(line)
    return bool(ok)
