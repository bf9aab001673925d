"""Shared oracles and fixtures.

The oracles here are deliberately independent of the package internals:
the joint enumerator walks assignments with itertools and dict lookups
instead of numpy broadcasting, and the gradient checker is plain central
differences.  Package results are compared against these.
"""

import itertools

import numpy as np
import pytest

from frontdoor.scm import CausalGraph, DiscreteSCM

REFERENCE_SCM_TEXT = """
# classic confounded mediator chain
node U 2 unobserved
node X 2
node Z 2
node Y 2
edge U X
edge X Z
edge Z Y
edge U Y
cpt U 0.5 0.5
cpt X 0 0.8 0.2
cpt X 1 0.1 0.9
cpt Z 0 0.75 0.25
cpt Z 1 0.25 0.75
cpt Y 0 0 0.7 0.3
cpt Y 1 0 0.3 0.7
cpt Y 0 1 0.5 0.5
cpt Y 1 1 0.1 0.9
""".lstrip()


def build_reference_scm():
    """U ~ Bern(0.5); P(X=1|U)=0.2/0.9; P(Z=1|X)=0.25/0.75;
    P(Y=1|z,u) = 0.3 + 0.4 z + 0.2 u."""
    g = CausalGraph()
    g.add_node("U", 2, observed=False)
    g.add_node("X", 2)
    g.add_node("Z", 2)
    g.add_node("Y", 2)
    g.add_edge("U", "X")
    g.add_edge("X", "Z")
    g.add_edge("Z", "Y")
    g.add_edge("U", "Y")
    p_y = np.zeros((2, 2, 2))
    for z in range(2):
        for u in range(2):
            p1 = 0.3 + 0.4 * z + 0.2 * u
            p_y[z, u] = [1 - p1, p1]
    cpts = {
        "U": [0.5, 0.5],
        "X": [[0.8, 0.2], [0.1, 0.9]],
        "Z": [[0.75, 0.25], [0.25, 0.75]],
        "Y": p_y,
    }
    return DiscreteSCM(g, cpts)


@pytest.fixture(scope="session")
def reference_scm():
    return build_reference_scm()


def brute_joint(scm):
    """Independent joint oracle: dict of full assignments -> probability."""
    graph = scm.graph
    order = graph.topological_order()
    out = {}
    ranges = [range(graph.domain(n)) for n in order]
    for values in itertools.product(*ranges):
        assign = dict(zip(order, values))
        p = 1.0
        for node in order:
            idx = tuple(assign[par] for par in graph.parents(node)) + (assign[node],)
            p *= float(scm.cpts[node][idx])
        out[tuple(sorted(assign.items()))] = p
    return out


def brute_marginal(scm, target):
    """Marginal of one variable from the brute-force joint."""
    graph = scm.graph
    probs = np.zeros(graph.domain(target))
    for assign, p in brute_joint(scm).items():
        probs[dict(assign)[target]] += p
    return probs


def random_frontdoor_scm(rng, observed_confounder=False):
    """A random model from the confounded mediator-chain family.

    Confounders point at both treatment and outcome; the mediator hangs
    only off the treatment, so the front-door criterion holds by
    construction.  Domain sizes 2-4, Dirichlet(1) CPT rows.
    """
    g = CausalGraph()
    n_conf = int(rng.integers(1, 3))
    conf = []
    for i in range(n_conf):
        name = f"U{i}"
        g.add_node(name, int(rng.integers(2, 5)), observed=False)
        conf.append(name)
    if observed_confounder:
        g.add_node("D", int(rng.integers(2, 5)))
        conf.append("D")
    g.add_node("X", int(rng.integers(2, 5)))
    g.add_node("Z", int(rng.integers(2, 5)))
    g.add_node("Y", int(rng.integers(2, 5)))
    for c in conf:
        g.add_edge(c, "X")
        g.add_edge(c, "Y")
    g.add_edge("X", "Z")
    g.add_edge("Z", "Y")

    cpts = {}
    for node in g.nodes:
        shape = tuple(g.domain(p) for p in g.parents(node)) + (g.domain(node),)
        rows = rng.dirichlet(np.ones(shape[-1]), size=int(np.prod(shape[:-1], initial=1)))
        cpts[node] = rows.reshape(shape)
    return DiscreteSCM(g, cpts)


def finite_difference(f, arrays, eps=1e-6):
    """Central-difference gradients of scalar f() w.r.t. each array in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            saved = a[i]
            a[i] = saved + eps
            fp = f()
            a[i] = saved - eps
            fm = f()
            a[i] = saved
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric):
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))
