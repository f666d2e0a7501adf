import numpy as np
import pytest
import scipy.sparse as sp

from kernode.data import GraphDataset, planted_partition_graph


def random_graph(n: int, p: float, seed: int) -> sp.csr_array:
    """Erdos-Renyi adjacency, symmetric 0/1 with an empty diagonal."""
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    a = (upper | upper.T).astype(np.float64)
    return sp.csr_array(a)


def path_graph(n: int) -> sp.csr_array:
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return sp.csr_array(a)


def complete_graph(n: int) -> sp.csr_array:
    return sp.csr_array(np.ones((n, n)) - np.eye(n))


def dense_abar(a: np.ndarray) -> np.ndarray:
    at = a + np.eye(len(a))
    d = 1.0 / np.sqrt(at.sum(axis=1))
    return d[:, None] * at * d[None, :]


def all_pairs_distances(a: np.ndarray) -> np.ndarray:
    """Floyd-Warshall on the dense adjacency; inf when unreachable."""
    n = len(a)
    dist = np.where(a > 0, 1.0, np.inf)
    np.fill_diagonal(dist, 0.0)
    for k in range(n):
        dist = np.minimum(dist, dist[:, [k]] + dist[[k], :])
    return dist


def random_dataset(n: int, n_classes: int, n_feat: int, p: float, seed: int,
                   name: str = "rand") -> GraphDataset:
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    x = rng.random((n, n_feat))
    return GraphDataset(name, x, labels, random_graph(n, p, seed))


@pytest.fixture(scope="session")
def planted():
    return planted_partition_graph(n_nodes=400, n_classes=3, p_in=0.04, p_out=0.002,
                                   n_features=60, seed=3, name="planted")


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
