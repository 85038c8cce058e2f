import numpy as np
import pytest

from expansionlab.dataspace import FinitePopulation, TransformSpec, build_neighborhood_graph


def random_instance(rng, n_range=(3, 10), k_choices=(1, 2), radius=0.2, overlap="witnessed"):
    n = int(rng.integers(*n_range))
    k = int(rng.choice(k_choices))
    labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    pop = FinitePopulation(rng.uniform(0, 1, (n, 2)), rng.dirichlet(np.ones(n)), labels, k)
    return build_neighborhood_graph(pop, TransformSpec(radius, overlap=overlap))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def clustered_graph(seed, sizes=(5, 5), spread=0.9, gap=2.5):
    from expansionlab.dataspace import gen_clustered_instance

    pop = gen_clustered_instance(len(sizes), sizes, spread=spread, gap=gap, seed=seed)
    return build_neighborhood_graph(pop, TransformSpec(1.0, overlap="witnessed"))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        status, detail = results[num]
        terminalreporter.write_line(f"criterion {num}: {status} - {detail}")
