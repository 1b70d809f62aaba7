def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail/skip line per acceptance criterion at the end of a run."""
    lines = []
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            if rep.when == "call" or (rep.when == "setup" and outcome == "skipped"):
                name = nodeid.split("::")[-1].replace("test_", "", 1)
                lines.append((name, outcome.upper()))
    if lines:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for name, outcome in lines:
            terminalreporter.write_line(f"  {outcome:<7} {name}")
