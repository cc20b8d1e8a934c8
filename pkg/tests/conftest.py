"""Shared pytest plumbing: a summary line per acceptance check."""


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = {}
    for key in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if key == "passed" and rep.when == "call":
                results.setdefault(name, "PASS")
            elif key == "skipped":
                results.setdefault(name, "SKIP")
            else:
                results[name] = "FAIL"
    if results:
        terminalreporter.section("acceptance summary")
        for name, status in results.items():
            terminalreporter.write_line(f"[{status}] {name}")
