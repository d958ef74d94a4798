"""Acceptance criteria 1-10, each printing one PASS/FAIL line with its time budget."""
import time

import pytest

from logtensor import suites


def _verdict(capsys, number, title, reports, elapsed, budget):
    failed = [r.tag for r in reports if not r.passed]
    within = budget is None or elapsed < budget
    status = "PASS" if not failed and within else "FAIL"
    limit = "" if budget is None else f" / {budget:.0f}s"
    detail = f" failing: {', '.join(failed)}" if failed else ""
    if not within:
        detail += " over time budget"
    with capsys.disabled():
        print(f"\ncriterion {number:2d} {status} {title} ({elapsed:.1f}s{limit}){detail}")
    return status == "PASS", failed


CRITERIA = [
    (1, "ordered-sum identity and Lubell refinement", lambda: suites.comb_suite(12, 10, 4), 5),
    (2, "exponentials of derivations, Leibniz, homomorphism", lambda: suites.series_suite(8, 50, 0), 10),
    (3, "ODE membership against brute force", lambda: suites.ode_suite(20, 0), None),
    (4, "built intertwiners at N = 6", lambda: suites.intertwiner_suite(trunc=6, count=20, seed=0), 30),
    (5, "transform round trips and coefficient recovery", lambda: suites.transform_suite(trunc=4), 15),
    (6, "intertwiner / P(z)-map correspondence", lambda: suites.correspondence_suite(2, (0, 1)), 10),
    (7, "dual Virasoro bracket", lambda: suites.dual_virasoro_suite(2), 10),
    (8, "compatibility and Jacobi on the generated module", lambda: suites.compatibility_suite(2, 0), 20),
    (9, "composite Jacobi identity", lambda: suites.compose_suite(4, 1, 8, 1e-8, 0), 30),
    (10, "Q(z)/P(z) transpose", lambda: suites.transpose_suite(2, 0), 5),
]


@pytest.mark.parametrize("number,title,run,budget", CRITERIA, ids=[f"criterion-{c[0]}" for c in CRITERIA])
def test_criterion(capsys, number, title, run, budget):
    start = time.perf_counter()
    reports = run()
    elapsed = time.perf_counter() - start
    ok, failed = _verdict(capsys, number, title, reports, elapsed, budget)
    assert reports and not failed
    assert ok, f"criterion {number} exceeded {budget}s ({elapsed:.1f}s)"
