"""Exact inference for discrete structural causal models.

Everything here is enumeration: the joint distribution is the literal
product of CPTs over all variable assignments, interventions mutilate the
graph, and the adjustment formulas are evaluated term by term from purely
observational quantities.  This module is the ground truth that the
learning-side estimators are tested against.

Identification of interventionals from observational data goes through
two classical routes: adjusting for observed confounders directly
(back-door), or routing through a mediator that intercepts every causal
path (front-door).  The front-door criterion for a mediator Z between
treatment X and outcome Y:

  (i)   every directed path from X to Y passes through Z;
  (ii)  every back-door path from Z to Y is blocked by {X};
  (iii) there is no unblocked back-door path from X to Z.

Blocking is plain d-separation, decided here by exhaustive enumeration of
undirected simple paths with collider logic (graphs are tiny, and the
brute-force form is easy to audit).  Unobserved nodes participate in
paths like any other node; they simply never appear in conditioning sets.
"""

from __future__ import annotations

import dataclasses

import numpy as np

JOINT_STATE_GUARD = 10**7


class ScmError(ValueError):
    pass


class CptError(ScmError):
    pass


class ConditioningError(ScmError):
    pass


class IdentificationError(ScmError):
    pass


class CapacityError(ScmError):
    pass


class ScmParseError(ScmError):
    pass


# -- graph -------------------------------------------------------------


class CausalGraph:
    """A DAG of named finite-domain variables."""

    def __init__(self):
        self._domain = {}
        self._observed = {}
        self._parents = {}
        self._children = {}

    # construction

    def add_node(self, name, domain_size, observed=True):
        if name in self._domain:
            raise ScmError(f"duplicate node {name!r}")
        if domain_size < 1:
            raise ScmError(f"node {name!r} needs a positive domain size")
        self._domain[name] = int(domain_size)
        self._observed[name] = bool(observed)
        self._parents[name] = []
        self._children[name] = []

    def add_edge(self, parent, child):
        for end in (parent, child):
            if end not in self._domain:
                raise ScmError(f"edge endpoint {end!r} is not a node")
        if parent == child:
            raise ScmError(f"self-loop on {parent!r}")
        if parent in self._parents[child]:
            raise ScmError(f"duplicate edge {parent!r} -> {child!r}")
        self._parents[child].append(parent)
        self._children[parent].append(child)
        self.topological_order()  # raises if this edge closed a cycle

    def copy(self):
        g = CausalGraph()
        g._domain = dict(self._domain)
        g._observed = dict(self._observed)
        g._parents = {k: list(v) for k, v in self._parents.items()}
        g._children = {k: list(v) for k, v in self._children.items()}
        return g

    # queries

    @property
    def nodes(self):
        return tuple(self._domain)

    def domain(self, name):
        return self._domain[name]

    def observed(self, name):
        return self._observed[name]

    def parents(self, name):
        return tuple(self._parents[name])

    def children(self, name):
        return tuple(self._children[name])

    def require(self, name):
        if name not in self._domain:
            raise ScmError(f"unknown node {name!r}")

    def topological_order(self):
        indeg = {n: len(self._parents[n]) for n in self._domain}
        ready = [n for n in self._domain if indeg[n] == 0]
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self._domain):
            raise ScmError("graph has a cycle")
        return order

    def descendants(self, name):
        out = set()
        frontier = [name]
        while frontier:
            n = frontier.pop()
            for c in self._children[n]:
                if c not in out:
                    out.add(c)
                    frontier.append(c)
        return out

    def directed_paths(self, src, dst):
        """All simple directed paths src -> ... -> dst, as node tuples."""
        paths = []

        def walk(node, trail):
            if node == dst:
                paths.append(tuple(trail))
                return
            for c in self._children[node]:
                if c not in trail:
                    walk(c, trail + [c])

        walk(src, [src])
        return paths

    def undirected_paths(self, src, dst):
        """All simple paths ignoring direction.

        Each path is (nodes, forward) where forward[i] is True when the
        graph edge runs nodes[i] -> nodes[i+1].
        """
        paths = []

        def walk(node, trail, dirs):
            if node == dst:
                paths.append((tuple(trail), tuple(dirs)))
                return
            for c in self._children[node]:
                if c not in trail:
                    walk(c, trail + [c], dirs + [True])
            for p in self._parents[node]:
                if p not in trail:
                    walk(p, trail + [p], dirs + [False])

        walk(src, [src], [])
        return paths

    def backdoor_paths(self, src, dst):
        """Undirected simple paths src..dst whose first edge points into src."""
        return [
            (nodes, dirs)
            for nodes, dirs in self.undirected_paths(src, dst)
            if dirs and not dirs[0]
        ]

    def path_blocked(self, nodes, dirs, conditioning):
        """d-separation blocking test for one path.

        An interior node is a collider when both adjacent edges point into
        it; a collider blocks unless it or one of its descendants is
        conditioned on, and a non-collider blocks exactly when it is
        conditioned on.
        """
        conditioning = set(conditioning)
        for i in range(1, len(nodes) - 1):
            into_from_left = dirs[i - 1]
            into_from_right = not dirs[i]
            if into_from_left and into_from_right:
                opened = nodes[i] in conditioning or (
                    self.descendants(nodes[i]) & conditioning
                )
                if not opened:
                    return True
            elif nodes[i] in conditioning:
                return True
        return False


# -- front-door criterion ----------------------------------------------


@dataclasses.dataclass
class CriterionReport:
    holds: bool
    failed_conditions: tuple
    interception: bool
    mediator_backdoors_blocked: bool
    treatment_to_mediator_clear: bool
    witnesses: dict

    def as_dict(self):
        return {
            "holds": self.holds,
            "failed_conditions": list(self.failed_conditions),
            "conditions": {
                "i_paths_intercepted": self.interception,
                "ii_mediator_backdoors_blocked": self.mediator_backdoors_blocked,
                "iii_treatment_mediator_clear": self.treatment_to_mediator_clear,
            },
            "witness_paths": {k: list(v) for k, v in self.witnesses.items()},
        }


def check_frontdoor_criterion(graph, treatment, outcome, mediator):
    """Evaluate all three mediator conditions; a single structural flaw can
    violate more than one, so every failure is reported with a witness path."""
    for n in (treatment, outcome, mediator):
        graph.require(n)

    cond_i, witness_i = True, None
    for path in graph.directed_paths(treatment, outcome):
        if mediator not in path[1:-1]:
            cond_i, witness_i = False, path
            break

    cond_ii, witness_ii = True, None
    for nodes, dirs in graph.backdoor_paths(mediator, outcome):
        if not graph.path_blocked(nodes, dirs, {treatment}):
            cond_ii, witness_ii = False, nodes
            break

    cond_iii, witness_iii = True, None
    for nodes, dirs in graph.backdoor_paths(treatment, mediator):
        if not graph.path_blocked(nodes, dirs, set()):
            cond_iii, witness_iii = False, nodes
            break

    failed = []
    witnesses = {}
    for label, ok, wit in (
        ("i", cond_i, witness_i),
        ("ii", cond_ii, witness_ii),
        ("iii", cond_iii, witness_iii),
    ):
        if not ok:
            failed.append(label)
            witnesses[label] = wit
    return CriterionReport(
        holds=not failed,
        failed_conditions=tuple(failed),
        interception=cond_i,
        mediator_backdoors_blocked=cond_ii,
        treatment_to_mediator_clear=cond_iii,
        witnesses=witnesses,
    )


# -- distributions -----------------------------------------------------


@dataclasses.dataclass
class Distribution:
    """A joint or marginal table; axis i of probs indexes variables[i]."""

    variables: tuple
    probs: np.ndarray

    def __post_init__(self):
        self.variables = tuple(self.variables)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != len(self.variables):
            raise ScmError("distribution rank does not match variable count")
        if np.any(self.probs < -1e-15):
            raise ScmError("negative probability")
        total = float(self.probs.sum())
        if abs(total - 1.0) > 1e-10:
            raise ScmError(f"probabilities sum to {total}, not 1")

    def marginal(self, keep):
        keep = tuple(keep)
        for v in keep:
            if v not in self.variables:
                raise ScmError(f"unknown variable {v!r}")
        drop = tuple(
            i for i, v in enumerate(self.variables) if v not in keep
        )
        probs = self.probs.sum(axis=drop) if drop else self.probs
        remaining = tuple(v for v in self.variables if v in keep)
        order = tuple(remaining.index(v) for v in keep)
        return Distribution(keep, np.transpose(probs, order))

    def condition(self, evidence):
        idx = []
        kept = []
        for i, v in enumerate(self.variables):
            if v in evidence:
                idx.append(int(evidence[v]))
            else:
                idx.append(slice(None))
                kept.append(v)
        unknown = set(evidence) - set(self.variables)
        if unknown:
            raise ScmError(f"unknown evidence variables {sorted(unknown)}")
        sliced = self.probs[tuple(idx)]
        mass = float(sliced.sum())
        if mass <= 0.0:
            raise ConditioningError(f"conditioning event has zero probability: {evidence}")
        return Distribution(tuple(kept), sliced / mass)

    def tv(self, other):
        """Total-variation distance to another distribution on the same variables."""
        if set(self.variables) != set(other.variables):
            raise ScmError("total variation needs identical variable sets")
        order = tuple(other.variables.index(v) for v in self.variables)
        q = np.transpose(other.probs, order)
        return 0.5 * float(np.abs(self.probs - q).sum())

    def items(self):
        for index in np.ndindex(*self.probs.shape):
            yield dict(zip(self.variables, index)), float(self.probs[index])


# -- structural model --------------------------------------------------


class DiscreteSCM:
    def __init__(self, graph, cpts):
        self.graph = graph
        self.cpts = {}
        for node in graph.nodes:
            if node not in cpts:
                raise CptError(f"missing CPT for {node!r}")
            expected = tuple(graph.domain(p) for p in graph.parents(node)) + (
                graph.domain(node),
            )
            table = np.asarray(cpts[node], dtype=np.float64)
            if table.shape != expected:
                raise CptError(
                    f"CPT for {node!r} has shape {table.shape}, expected {expected}"
                )
            if np.any(table < 0):
                raise CptError(f"CPT for {node!r} has negative entries")
            sums = table.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > 1e-12):
                raise CptError(f"CPT rows for {node!r} do not sum to 1")
            self.cpts[node] = table
        extra = set(cpts) - set(graph.nodes)
        if extra:
            raise CptError(f"CPTs for unknown nodes {sorted(extra)}")


def joint(scm):
    """Exact joint distribution by product-of-CPTs enumeration."""
    graph = scm.graph
    order = graph.topological_order()
    sizes = [graph.domain(n) for n in order]
    states = 1
    for s in sizes:
        states *= s
    if states > JOINT_STATE_GUARD:
        raise CapacityError(f"joint support {states} exceeds guard {JOINT_STATE_GUARD}")
    probs = np.ones(sizes)
    for node in order:
        axes_vars = list(graph.parents(node)) + [node]
        cpt = scm.cpts[node]
        positions = sorted(
            range(len(axes_vars)), key=lambda i: order.index(axes_vars[i])
        )
        aligned = np.transpose(cpt, positions)
        shape = [
            graph.domain(v) if v in axes_vars else 1 for v in order
        ]
        probs = probs * aligned.reshape(shape)
    return Distribution(tuple(order), probs)


def observational_conditional(scm, target, evidence):
    scm.graph.require(target)
    conditioned = joint(scm).condition(evidence)
    if target in evidence:
        # self-evidence: the conditioning already fixed the target
        probs = np.zeros(scm.graph.domain(target))
        probs[int(evidence[target])] = 1.0
        return Distribution((target,), probs)
    return conditioned.marginal((target,))


def intervene(scm, assignments):
    """Mutilated model: assigned nodes lose parents and become point masses."""
    graph = scm.graph
    for node, value in assignments.items():
        graph.require(node)
        if not 0 <= int(value) < graph.domain(node):
            raise ScmError(f"value {value} outside domain of {node!r}")
    g = graph.copy()
    cpts = {n: scm.cpts[n] for n in graph.nodes}
    for node, value in assignments.items():
        for p in list(g._parents[node]):
            g._children[p].remove(node)
        g._parents[node] = []
        row = np.zeros(g.domain(node))
        row[int(value)] = 1.0
        cpts[node] = row
    return DiscreteSCM(g, cpts)


def interventional(scm, target, do_assignments):
    """Ground-truth P(target | do(assignments)) by mutilated-graph enumeration."""
    scm.graph.require(target)
    return joint(intervene(scm, do_assignments)).marginal((target,))


def backdoor_estimate(scm, target, treatment, treatment_value, adjustment):
    """Sum over adjustment strata of prior times conditional outcome.

    Evaluated from the observational joint only; never consults the
    mutilated graph.
    """
    graph = scm.graph
    graph.require(target)
    graph.require(treatment)
    adjustment = tuple(adjustment)
    for v in adjustment:
        graph.require(v)
    j = joint(scm)
    if not adjustment:
        return j.condition({treatment: treatment_value}).marginal((target,))
    prior = j.marginal(adjustment)
    out = np.zeros(graph.domain(target))
    for assignment, weight in prior.items():
        if weight == 0.0:
            continue
        evidence = {treatment: treatment_value, **assignment}
        try:
            cond = j.condition(evidence)
        except ConditioningError as e:
            raise ConditioningError(
                f"zero-probability stratum {assignment} under "
                f"{treatment}={treatment_value} with prior {weight}"
            ) from e
        out += weight * cond.marginal((target,)).probs
    return Distribution((target,), out)


def frontdoor_estimate(scm, target, treatment, treatment_value, mediator):
    """Mediator-route identification from observational quantities only:

        sum_z p(z|x) sum_x' p(x') P(target | z, x')

    Requires the front-door criterion; raises IdentificationError naming
    the violated condition otherwise.
    """
    graph = scm.graph
    for n in (target, treatment, mediator):
        graph.require(n)
    report = check_frontdoor_criterion(graph, treatment, target, mediator)
    if not report.holds:
        conds = ", ".join(f"({c})" for c in report.failed_conditions)
        raise IdentificationError(
            f"front-door criterion condition {conds} fails for mediator "
            f"{mediator!r}; witnesses {report.witnesses}"
        )
    j = joint(scm)
    p_z = j.condition({treatment: treatment_value}).marginal((mediator,)).probs
    p_x = j.marginal((treatment,)).probs
    out = np.zeros(graph.domain(target))
    for z, wz in enumerate(p_z):
        if wz == 0.0:
            continue
        inner = np.zeros(graph.domain(target))
        for xv, wx in enumerate(p_x):
            if wx == 0.0:
                continue
            try:
                cond = j.condition({mediator: z, treatment: xv})
            except ConditioningError:
                # Degenerate mediator: the (z, x') stratum is off-support,
                # so the formula's conditional is undefined there.  Drop
                # the impossible conjunct and use P(target | z), which is
                # defined whenever this z has weight.  This makes the
                # estimate total; with a deterministic mediator and an
                # exogenous treatment it is also still exact.
                cond = j.condition({mediator: z})
            inner += wx * cond.marginal((target,)).probs
        out += wz * inner
    return Distribution((target,), out)


# -- sampling and plug-in estimation -----------------------------------


def ancestral_sample(scm, n, rng):
    """Draw n joint samples; returns a dict of per-node integer arrays."""
    graph = scm.graph
    out = {}
    for node in graph.topological_order():
        cpt = scm.cpts[node]
        parents = graph.parents(node)
        if parents:
            rows = cpt[tuple(out[p] for p in parents)]
        else:
            rows = np.broadcast_to(cpt, (n, cpt.shape[-1]))
        u = rng.random(n)
        out[node] = (u[:, None] > np.cumsum(rows, axis=1)).sum(axis=1)
    return out


@dataclasses.dataclass
class FrontdoorFit:
    """Plug-in interventional table fitted from observational triples."""

    p_x: np.ndarray           # (|X|,)
    p_z_given_x: np.ndarray   # (|X|, |Z|)
    p_y_given_zx: np.ndarray  # (|Z|, |X|, |Y|)
    do_table: np.ndarray      # (|X|, |Y|): fitted P(y | do(x))


def mil_fit(samples, domains, pseudocount=1.0):
    """Fit the interventional table from observational (x, y, z) triples.

    Estimates p(x'), p(z|x), and P(y|z,x') by counting, then composes the
    mediator formula.  This is the maximizer of the mean interventional
    log-likelihood within the plug-in family.  With the default
    pseudocount of 1 every count gets add-one smoothing, which also
    supplies the uniform fallback for never-observed strata; with
    pseudocount=0 the estimates are raw empirical ratios (exact for
    degenerate models) and only empty strata fall back to uniform.
    """
    samples = np.asarray(samples, dtype=np.int64)
    if samples.ndim != 2 or samples.shape[1] != 3:
        raise ScmError("samples must be an (N, 3) array of (x, y, z) triples")
    if samples.shape[0] == 0:
        raise ScmError("empty sample set")
    nx, ny, nz = (int(d) for d in domains)
    xs, ys, zs = samples[:, 0], samples[:, 1], samples[:, 2]
    for col, card, name in ((xs, nx, "x"), (ys, ny, "y"), (zs, nz, "z")):
        if col.min() < 0 or col.max() >= card:
            raise ScmError(f"{name} values outside domain of size {card}")
    seen_x = np.bincount(xs, minlength=nx)
    if np.any(seen_x == 0):
        missing = int(np.argmin(seen_x))
        raise ScmError(f"treatment value {missing} never observed")

    c = float(pseudocount)
    n = samples.shape[0]

    counts_x = seen_x.astype(np.float64)
    p_x = _smoothed_rows(counts_x[None, :], c)[0]

    counts_xz = np.zeros((nx, nz))
    np.add.at(counts_xz, (xs, zs), 1.0)
    p_z_given_x = _smoothed_rows(counts_xz, c)

    counts_zxy = np.zeros((nz, nx, ny))
    np.add.at(counts_zxy, (zs, xs, ys), 1.0)
    p_y_given_zx = _smoothed_rows(counts_zxy.reshape(nz * nx, ny), c).reshape(
        nz, nx, ny
    )
    if c == 0:
        # Without pseudocounts an empty (z, x') stratum backs off to the
        # z-only conditional (mirroring the exact estimator's handling of
        # off-support strata), and only an unseen z falls to uniform.
        p_y_given_z = _smoothed_rows(counts_zxy.sum(axis=1), c)
        empty = counts_zxy.sum(axis=2) == 0
        p_y_given_zx[empty] = np.broadcast_to(
            p_y_given_z[:, None, :], (nz, nx, ny)
        )[empty]

    # do_table[x, y] = sum_z p(z|x) sum_x' p(x') P(y|z,x')
    inner = np.einsum("a,zay->zy", p_x, p_y_given_zx)
    do_table = np.einsum("xz,zy->xy", p_z_given_x, inner)
    return FrontdoorFit(p_x, p_z_given_x, p_y_given_zx, do_table)


def _smoothed_rows(counts, pseudocount):
    counts = np.asarray(counts, dtype=np.float64)
    k = counts.shape[-1]
    if pseudocount > 0:
        return (counts + pseudocount) / (
            counts.sum(axis=-1, keepdims=True) + pseudocount * k
        )
    totals = counts.sum(axis=-1, keepdims=True)
    out = np.full_like(counts, 1.0 / k)
    mask = totals[..., 0] > 0
    out[mask] = counts[mask] / totals[mask]
    return out


def interventional_loglik(do_table, xs, ys):
    """Total log-likelihood of outcomes under an interventional table.

    The no-interference reading of an i.i.d. sample: the joint
    interventional log-likelihood is exactly the sum of per-sample terms,
    which is what this computes.
    """
    do_table = np.asarray(do_table, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    return float(np.log(do_table[xs, ys]).sum())


# -- text format -------------------------------------------------------


def parse_scm(text):
    """Parse the line-oriented SCM description.

    Directives: ``node <name> <domain_size> [unobserved]``,
    ``edge <parent> <child>``, and one ``cpt <name> <parent values...>
    <probs...>`` line per parent assignment (roots take a single line of
    probs).  ``#`` starts a comment.
    """
    graph = CausalGraph()
    cpt_rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "node":
                if len(args) not in (2, 3):
                    raise ScmError("node takes <name> <domain_size> [unobserved]")
                if len(args) == 3 and args[2] != "unobserved":
                    raise ScmError(f"unknown node flag {args[2]!r}")
                graph.add_node(args[0], int(args[1]), observed=len(args) == 2)
            elif kind == "edge":
                if len(args) != 2:
                    raise ScmError("edge takes <parent> <child>")
                graph.add_edge(args[0], args[1])
            elif kind == "cpt":
                if not args:
                    raise ScmError("cpt needs a node name")
                cpt_rows.append((lineno, args[0], args[1:]))
            else:
                raise ScmError(f"unknown directive {kind!r}")
        except ScmError as e:
            raise ScmParseError(f"line {lineno}: {e}") from None
        except ValueError as e:
            raise ScmParseError(f"line {lineno}: {e}") from None

    tables = {}
    filled = {}
    for node in graph.nodes:
        shape = tuple(graph.domain(p) for p in graph.parents(node)) + (
            graph.domain(node),
        )
        tables[node] = np.full(shape, np.nan)
        filled[node] = np.zeros(shape[:-1], dtype=bool)

    for lineno, node, fields in cpt_rows:
        if node not in tables:
            raise ScmParseError(f"line {lineno}: cpt for unknown node {node!r}")
        parents = graph.parents(node)
        want = len(parents) + graph.domain(node)
        if len(fields) != want:
            raise ScmParseError(
                f"line {lineno}: cpt {node!r} takes {len(parents)} parent values "
                f"and {graph.domain(node)} probabilities"
            )
        try:
            assign = tuple(int(v) for v in fields[: len(parents)])
            probs = [float(v) for v in fields[len(parents):]]
        except ValueError as e:
            raise ScmParseError(f"line {lineno}: {e}") from None
        for value, parent in zip(assign, parents):
            if not 0 <= value < graph.domain(parent):
                raise ScmParseError(
                    f"line {lineno}: value {value} outside domain of {parent!r}"
                )
        if filled[node][assign]:
            raise ScmParseError(f"line {lineno}: duplicate cpt row for {node!r}")
        filled[node][assign] = True
        tables[node][assign] = probs

    for node in graph.nodes:
        if not filled[node].all():
            raise ScmParseError(f"cpt for {node!r} is incomplete")
    try:
        return DiscreteSCM(graph, tables)
    except ScmError as e:
        raise ScmParseError(str(e)) from None


def format_scm(scm):
    """Serialize back to the text format; round-trips through parse_scm."""
    graph = scm.graph
    lines = []
    for node in graph.nodes:
        flag = "" if graph.observed(node) else " unobserved"
        lines.append(f"node {node} {graph.domain(node)}{flag}")
    for node in graph.nodes:
        for p in graph.parents(node):
            lines.append(f"edge {p} {node}")
    for node in graph.nodes:
        table = scm.cpts[node]
        rows = table.reshape(-1, table.shape[-1])
        assigns = list(np.ndindex(*table.shape[:-1]))
        for assign, row in zip(assigns, rows):
            parts = ["cpt", node]
            parts += [str(v) for v in assign]
            parts += [repr(float(p)) for p in row]
            lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
