import numpy as np

from causalwrap.scm import Family, Mechanism, MechKind, Scm


def linear_scm(d, coefs, noise_sd=1.0, order=None):
    """All-linear SCM from ``{(parent, child): coefficient}``."""
    mechs = []
    for j in range(d):
        pa = tuple(sorted(p for p, c in coefs if c == j))
        mechs.append(Mechanism(MechKind.LINEAR, pa, tuple(coefs[(p, j)] for p in pa), noise_sd))
    return Scm(Family.LG, tuple(order or range(d)), tuple(mechs))


def gaussian_table(n, d, seed=0):
    from causalwrap.data import Table

    return Table.from_array(np.random.default_rng(seed).normal(size=(n, d)))


# criterion number -> PASS/FAIL line, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[num])
