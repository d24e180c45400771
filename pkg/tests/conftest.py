import numpy as np
import pytest

from lsvsi.case import builtin_case, parse_case
from lsvsi.continuation import resample, trace_pv_curve
from lsvsi.harness import preset, trace_scenario


def two_bus_text(p_mw=0.0, q_mvar=0.0, r=0.02, x=0.1, base=100.0, zip_row=None):
    zip_block = ""
    if zip_row is not None:
        zip_block = "mpc.zip = [\n\t2\t" + "\t".join(repr(float(c)) for c in zip_row) + ";\n];\n"
    return f"""function mpc = two_bus
mpc.baseMVA = {base!r};
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t1;
\t2\t1\t{p_mw!r}\t{q_mvar!r}\t0\t0\t1\t1\t0\t1;
];
mpc.gen = [
\t1\t0\t0\t9999\t-9999\t1\t{base!r}\t1;
];
mpc.branch = [
\t1\t2\t{r!r}\t{x!r}\t0\t0\t0\t0\t0\t0\t1;
];
{zip_block}"""


def two_bus(p_pu=0.0, q_pu=0.0, r=0.02, x=0.1, base=100.0, zip_row=None):
    return parse_case(two_bus_text(p_pu * base, q_pu * base, r, x, base, zip_row))


def two_bus_pmax(r, x):
    """Closed-form unity power factor loadability of the 2-bus line at 1 p.u. source."""
    y = 1 / complex(r, x)
    g, b = y.real, -y.imag
    return (-(b * b + g * g) * g + (b * b + g * g) ** 1.5) / (2 * b * b)


def two_bus_index(p, r, x):
    """Closed-form normalized index of the 2-bus line at unity power factor load p."""
    y = 1 / complex(r, x)
    g, b = y.real, -y.imag
    num = b**4 + 2 * b * b * g * g - 4 * b * b * g * p - 4 * b * b * p * p + g**4 - 4 * g**3 * p
    return num / (b * b + g * g) ** 2


@pytest.fixture(scope="session")
def case3():
    return builtin_case("case3_zip")


@pytest.fixture(scope="session")
def ieee30():
    return builtin_case("case_ieee30")


@pytest.fixture(scope="session")
def trace3(case3):
    return trace_pv_curve(case3)


@pytest.fixture(scope="session")
def sweep3(trace3):
    return resample(trace3, 0.01)


@pytest.fixture(scope="session")
def trace30(ieee30):
    return trace_pv_curve(ieee30)


@pytest.fixture(scope="session")
def trace30_zip():
    return trace_scenario(preset("ieee30_zip"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
