import numpy as np
import pytest

from subtiling import (GdifsGraph, MassVector, Substitution, build_graph,
                       fixture_path, load_substitution, mass_vector,
                       measure_normalization, suspension_lengths,
                       transverse_weights)

FIXTURES = ["cantor", "cantor1001", "sigma2", "sigma_k0", "sigma_k1",
            "sigma_k2", "sigma_k3", "carpet", "openq1"]
ADMISSIBLE_1D = ["cantor", "cantor1001", "sigma2", "sigma_k0", "sigma_k1",
                 "sigma_k2", "sigma_k3"]


@pytest.fixture(scope="session")
def subs() -> dict[str, Substitution]:
    return {name: load_substitution(fixture_path(name)) for name in FIXTURES}


@pytest.fixture(scope="session")
def cantor(subs) -> Substitution:
    return subs["cantor"]


@pytest.fixture(scope="session")
def cantor1001(subs) -> Substitution:
    return subs["cantor1001"]


@pytest.fixture(scope="session")
def carpet(subs) -> Substitution:
    return subs["carpet"]


class Workset:
    """Graph, weights, masses and normalization of one admissible fixture."""

    def __init__(self, sub: Substitution) -> None:
        self.sub = sub
        self.graph: GdifsGraph = build_graph(sub)
        self.tw = transverse_weights(sub)
        self.mass: MassVector = mass_vector(self.graph, self.tw.xi_tr)
        self.xi_len = suspension_lengths(sub) if sub.dim == 1 else None
        self.norm = measure_normalization(sub, self.xi_len, self.tw, self.mass)
        self.alpha = self.graph.alpha


@pytest.fixture(scope="session")
def cantor_ws(cantor) -> Workset:
    return Workset(cantor)


@pytest.fixture(scope="session")
def cantor1001_ws(cantor1001) -> Workset:
    return Workset(cantor1001)


@pytest.fixture(scope="session")
def carpet_ws(carpet) -> Workset:
    return Workset(carpet)


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
