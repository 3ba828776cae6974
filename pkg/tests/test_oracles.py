"""Sanity checks for the shared reference routines themselves."""
import numpy as np
import pytest

from oracles import adjusted_rand, brute_force_assignment, central_difference, relative_error


def test_adjusted_rand_known_values():
    assert adjusted_rand([0, 0, 1, 1], [5, 5, 2, 2]) == 1.0
    assert adjusted_rand([0, 0, 1, 1], [0, 0, 1, 2]) == pytest.approx(4 / 7, abs=1e-12)
    assert adjusted_rand([0, 0, 0, 0], [0, 1, 2, 3]) == 0.0
    assert adjusted_rand([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5, abs=1e-12)


def test_central_difference_of_polynomial():
    x = np.array([0.5, -1.0, 2.0])
    g = central_difference(lambda v: float(np.sum(v ** 3)), x)
    assert relative_error(g, 3 * x ** 2) < 1e-9


def test_brute_force_assignment_small():
    cost = np.array([[4.0, 1.0], [2.0, 0.5], [3.0, 9.0]])
    best, rows = brute_force_assignment(cost)
    assert best == 3.0 and rows == (1, 0)
