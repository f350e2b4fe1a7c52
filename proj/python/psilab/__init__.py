"""Ontological-model no-go checks and pilot-wave trajectory simulations."""

import json

from ._psilab import (
    ConfigError,
    DomainError,
    LookupError,
    born,
    make_qubit_pair,
    pbr_table,
    run_cli,
    zero_constraints,
)
from . import _psilab

__all__ = [
    "ConfigError",
    "DomainError",
    "LookupError",
    "beam_splitter",
    "born",
    "escape_demo",
    "make_qubit_pair",
    "pbr_check",
    "pbr_table",
    "run_cli",
    "stern_gerlach",
    "zero_constraints",
]


def pbr_check(scene="overlap", cells=4, shared=2, theta=0.7853981633974483, qubits=3, tol=1e-9):
    """Zero constraints, analytic contradiction and LP feasibility for a scene."""
    return json.loads(_psilab.pbr_check_json(scene, cells, shared, theta, qubits, tol))


def escape_demo(scene):
    """Preparation-conditioned model for 'beam-splitter' or 'orthogonal' with its checks."""
    return json.loads(_psilab.escape_json(scene))


def stern_gerlach(theta, n, seed=1, threads=1, t_final=3.0, cells=1024, dt=1e-3, b1=-10.0):
    """Stern-Gerlach trajectory ensemble: stats, start points, final positions, outcomes."""
    return json.loads(_psilab.stern_gerlach_json(theta, n, seed, threads, t_final, cells, dt, b1))


def beam_splitter(prep, n, seed=1, threads=1):
    """Beam-splitter scene for prep in psi_1, psi_2, plus, minus."""
    return json.loads(_psilab.beam_splitter_json(prep, n, seed, threads))
