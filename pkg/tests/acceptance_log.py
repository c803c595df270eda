RESULTS: dict = {}


def record(key: str, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {key} {title}: {detail}"
    RESULTS[key] = line
    print(line)
    return ok
