"""Shared fixtures: the double-integrator instance both controllers run on."""

import numpy as np
import pytest

from smpckit import dafmpc, disturbance, stripedmpc
from smpckit.model import LinearSystem
from smpckit.polytope import HPolytope

X0_DA = np.array([1.8, 0.3])
X0_STRIPED = np.array([2.0, 0.5])


@pytest.fixture(scope="session")
def di_system():
    return LinearSystem([[1.0, 1.0], [0.0, 1.0]], [[0.5], [1.0]], np.eye(2))


@pytest.fixture(scope="session")
def di_W():
    return disturbance.uniform_box([-0.1, -0.1], [0.1, 0.1], seed=77)


@pytest.fixture(scope="session")
def di_Z():
    return HPolytope.box([-2.5, -2.5, -1.0], [2.5, 2.5, 1.0])


@pytest.fixture(scope="session")
def da_ctrl(di_system, di_W, di_Z):
    cfg = dafmpc.DAConfig(di_system, 4, np.eye(2), [[1.0]], di_Z, di_W)
    return dafmpc.synthesize_da(cfg)


@pytest.fixture(scope="session")
def striped_cons():
    return [
        ([1 / 1.8, 0.0], [0.0], 0.9), ([-1 / 1.8, 0.0], [0.0], 0.9),
        ([0.0, 1 / 1.2], [0.0], 0.9), ([0.0, -1 / 1.2], [0.0], 0.9),
        ([0.0, 0.0], [1 / 1.8], 0.9), ([0.0, 0.0], [-1 / 1.8], 0.9),
    ]


@pytest.fixture(scope="session")
def striped_ctrl(di_system, di_W, striped_cons):
    cfg = stripedmpc.StripedConfig(
        di_system, 6, np.eye(2), [[1.0]], striped_cons, di_W,
        HPolytope.box([-6.0, -6.0], [6.0, 6.0]))
    return stripedmpc.synthesize_striped(cfg)


@pytest.fixture(scope="session")
def di_xinf(di_system, di_W, da_ctrl):
    from smpckit import polytope

    Acl = di_system.A + di_system.B @ da_ctrl.K
    return polytope.default_reach_set(Acl, di_system.D, di_W.support,
                                      eps_frac=0.01)


@pytest.fixture(scope="session")
def da_ensemble(di_system, da_ctrl, di_W, di_xinf):
    from smpckit import linalg, simulate

    l_ss = linalg.terminal_stage_cost(di_system.A + di_system.B @ da_ctrl.K,
                                      di_system.D, di_W.covariance,
                                      np.eye(2), [[1.0]], da_ctrl.K)
    return simulate.run_ensemble(di_system, da_ctrl, di_W, np.eye(2), [[1.0]],
                                 X0_DA, 300, 500, master_seed=20260808,
                                 Xinf=di_xinf, l_ss_ref=l_ss)


@pytest.fixture(scope="session")
def striped_ensemble(di_system, striped_ctrl, di_W, di_xinf):
    from smpckit import linalg, simulate

    l_ss = linalg.terminal_stage_cost(
        di_system.A + di_system.B @ striped_ctrl.K, di_system.D,
        di_W.covariance, np.eye(2), [[1.0]], striped_ctrl.K)
    return simulate.run_ensemble(di_system, striped_ctrl, di_W, np.eye(2),
                                 [[1.0]], X0_STRIPED, 300, 500,
                                 master_seed=20260809, Xinf=di_xinf,
                                 l_ss_ref=l_ss)


def sample_in_polytope(P, rng, count, shrink=1.0):
    """Rejection-sample ``count`` points of shrink * P from its bounding box."""
    lo = np.array([-P.support(-np.eye(P.dim)[j]) for j in range(P.dim)])
    hi = np.array([P.support(np.eye(P.dim)[j]) for j in range(P.dim)])
    out = []
    while len(out) < count:
        cand = rng.uniform(lo, hi, size=(4 * (count - len(out)) + 16, P.dim))
        for x in cand[P.contains_all(cand / shrink)]:
            out.append(x)
            if len(out) == count:
                break
    return np.asarray(out)
