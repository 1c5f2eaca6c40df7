import numpy as np
import pytest

from implicit_motion import builtin, parse_problem
from implicit_motion.errors import InputError
from implicit_motion.problem import BUILTIN

BASE = """
[manifold]
m = 1
s = 1
g1 = x1^2/2 - y1 - 2
box = -3 3, -10 10
"""


@pytest.mark.parametrize("name", BUILTIN)
def test_builtins_parse(name):
    prob = builtin(name)
    assert prob.name == name
    xi = prob.seed_point()
    assert prob.manifold.contains(xi)


def test_number_fields_accept_expressions():
    prob = parse_problem(BASE + "[perturbation]\nperiod = 2*pi\nh1 = cos(t)\n")
    assert prob.period == pytest.approx(2 * np.pi)
    assert prob.perturbation.tangency == "x_only"


@pytest.mark.parametrize("extra, message", [
    ("[force]\nf1 = 1\nf2 = 2\nf3 = 3\n", "components"),
    ("[force]\nf1 = z\n", "unknown identifier"),
    ("[perturbation]\nh1 = cos(t)\n", "missing period"),
    ("[perturbation]\nperiod = -1\nh1 = cos(t)\n", "positive"),
    ("[degree]\nmap = G\n", "map must be"),
    ("[degree]\nbox = -1 1\n", "intervals"),
    ("[bogus]\nx = 1\n", "unknown section"),
    ("[continuation]\norigin = 1 2 3\n", "origin"),
    ("[integrate]\nmethod = euler\n", "method"),
    ("[force]\nf1 = x1\nf3 = 1\n", "numbered"),
])
def test_problem_errors(extra, message):
    with pytest.raises(InputError, match=message):
        parse_problem(BASE + extra)


def test_force_kinds_must_agree():
    text = BASE + "[force]\nf1 = -x1\n[perturbation]\nperiod = 1\nh1 = 0\nh2 = 0\n"
    with pytest.raises(InputError, match="same kind"):
        parse_problem(text)


def test_missing_manifold():
    with pytest.raises(InputError):
        parse_problem("[force]\nf1 = 1\n")
