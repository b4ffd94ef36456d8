from collections import defaultdict

CRITERIA = {
    1: "Test 1 fitted orders (elliptic, FE, BDF, ME)",
    2: "Test 2 and Test 3 fitted orders",
    3: "Laplacian ghost symmetry",
    4: "direct vs stencil ghost fill",
    5: "polynomial reproduction",
    6: "stability region",
    7: "long-run stability and FE divergence",
    8: "solvability determinant ratios",
    9: "cylinder scattering",
    10: "wavy-channel heat",
    11: "annular pulse self-convergence",
    12: "conditioning under grid halving",
}

_outcomes = defaultdict(list)


def pytest_runtest_logreport(report):
    marker = report.keywords.get("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes[dict(report.user_properties)["criterion"]].append((report.nodeid, report.outcome))


def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, label in CRITERIA.items():
        res = _outcomes.get(n)
        if not res:
            terminalreporter.write_line(f"criterion {n:2d} NOT RUN  {label}")
            continue
        bad = [nid.split("::")[-1] for nid, out in res if out != "passed"]
        status = "PASS" if not bad else "FAIL"
        extra = f"  (failed: {', '.join(bad)})" if bad else ""
        terminalreporter.write_line(f"criterion {n:2d} {status:8s} {label} [{len(res) - len(bad)}/{len(res)}]{extra}")
