import numpy as np
import pytest

from detsurv.instance import Frames, Instance
from detsurv.kernel import Kernel, projection_kernel_with_diagonal
from detsurv.linkage import LinkStructure, build_link_structure


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_orthogonal(n: int, g: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(g.standard_normal((n, n)))
    return q * np.sign(np.diagonal(r))[None, :]


def random_contracting_kernel(n: int, g: np.random.Generator) -> Kernel:
    """Generic kernel with eigenvalues drawn strictly inside (0, 1)."""
    u = random_orthogonal(n, g)
    lam = g.uniform(0.05, 0.95, size=n)
    m = (u * lam[None, :]) @ u.T
    return Kernel(0.5 * (m + m.T))


def random_projection_kernel(n: int, r: int, g: np.random.Generator) -> Kernel:
    u = random_orthogonal(n, g)[:, :r]
    m = u @ u.T
    return Kernel(0.5 * (m + m.T), is_projection=True)


def random_interior_diagonal(n: int, n_s: int, g: np.random.Generator) -> np.ndarray:
    """Strictly interior diagonal with exact integer sum ``n_s``."""
    raw = g.uniform(0.05, 0.95, size=n)
    pi = raw * (n_s / raw.sum())
    for _ in range(200):
        over = pi >= 0.99
        if not over.any():
            break
        pi[over] = 0.99
        free = ~over
        pi[free] *= (n_s - 0.99 * over.sum()) / pi[free].sum()
    pi *= n_s / pi.sum()
    assert pi.min() > 0.0 and pi.max() < 1.0
    return pi


def random_link_structure(
    n_a: int, n_b: int, g: np.random.Generator, max_deg: int = 3
) -> LinkStructure:
    """Random links with every target covered and A-degrees in 1..max_deg."""
    edges = set()
    for k in range(n_b):
        edges.add((int(g.integers(n_a)), k))
    for i in range(n_a):
        deg = int(g.integers(1, max_deg + 1))
        partners = g.permutation(n_b)[:deg]
        for k in partners:
            edges.add((i, int(k)))
    return build_link_structure(n_a, n_b, sorted(edges))


def appendix_instance() -> tuple[LinkStructure, np.ndarray]:
    """Fully linked 3x2 layout with interior intermediate probabilities."""
    ls = build_link_structure(3, 2, [(i, k) for k in range(2) for i in range(3)])
    pi_a = np.array([0.7, 0.5, 0.8])  # fixed-size-2 intermediate design
    return ls, pi_a


def small_random_instance(g: np.random.Generator, n_a_max: int = 4, n_b_max: int = 3):
    """Random small instance for brute-force comparison: returns
    (kernel, link structure, theta, pi1ab, y)."""
    n_a = int(g.integers(2, n_a_max + 1))
    n_b = int(g.integers(1, n_b_max + 1))
    ls = random_link_structure(n_a, n_b, g, max_deg=min(3, n_b))
    if g.random() < 0.5:
        n_s = int(g.integers(1, n_a))
        kernel = projection_kernel_with_diagonal(
            random_interior_diagonal(n_a, n_s, g)
        )
    else:
        kernel = random_contracting_kernel(n_a, g)
    theta = np.empty(ls.n_links)
    for k in range(n_b):
        d = ls.links_of_target(k)
        raw = g.uniform(-0.5, 1.5, size=d.size)
        raw[-1] = 1.0 - raw[:-1].sum()
        theta[d] = raw
    pi1ab = np.empty(ls.n_links)
    for i in range(n_a):
        d = ls.links_of_intermediate(i)
        if d.size == 0:
            continue
        raw = g.uniform(0.2, 1.0, size=d.size)
        pi1ab[d] = raw / raw.sum()
    y = g.uniform(1.0, 5.0, size=n_b)
    return kernel, ls, theta, pi1ab, y


def synthetic_frames(
    ls: LinkStructure, pi_a: np.ndarray, g: np.random.Generator, p: int = 2, q: int = 2
) -> Frames:
    x_a = g.uniform(0.5, 3.0, size=(ls.n_a, p))
    x_b = g.uniform(0.5, 3.0, size=(ls.n_b, q))
    return Frames(
        pi_a=pi_a,
        x_a=x_a,
        y_a=x_a[:, 0] * g.uniform(0.8, 1.2, size=ls.n_a),
        x_b=x_b,
        y_b=x_b[:, 0] * g.uniform(0.8, 1.2, size=ls.n_b),
    )


@pytest.fixture
def base_rng():
    return rng(1234)
