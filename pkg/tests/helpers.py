"""Shared test fixtures: toy kernel models, random twin generators and
small independent oracles."""
from __future__ import annotations

import itertools
import random
from typing import Iterable, Mapping

from galstwin.kernel import (ONE, ClockDomain, FifoChannel, ModelBlock, Wire, WireMode)


class Gate(ModelBlock):
    """Deterministic toy model.

    Output ``o`` reads only the inputs listed in ``deps[o]`` and the model's
    tick counter, so it can be computed while other inputs are unknown.
    """

    def __init__(self, name: str, inputs: Iterable[str], outputs: Iterable[str],
                 deps: Mapping[str, Iterable[str]] | None = None, salt: int = 0):
        self.name = name
        self.inputs = tuple(inputs)
        self.outputs = tuple(outputs)
        self.dependencies = {o: frozenset(d) for o, d in (deps or {}).items()}
        self.salt = salt

    def initial_state(self):
        return 0

    def react(self, state, tick, inputs):
        emits = {}
        for k, o in enumerate(self.outputs):
            acc = state * 7 + k + self.salt
            for p in sorted(self.dependencies.get(o, ())):
                s = inputs[p]
                if s.status is ONE:
                    acc += 3 + int(10 * (s.value or 0.0))
            if acc % 3 != 0:
                emits[o] = (acc % 17) / 4.0
        present = sum(1 for p in self.inputs if inputs[p].status is ONE)
        return emits, (state + 1 + present) % 1009


def chain_domain(mode: WireMode = WireMode.IMMEDIATE) -> ClockDomain:
    a = Gate("A", (), ("out",))
    b = Gate("B", ("inp",), ("out",), {"out": ("inp",)})
    return ClockDomain("d", [a, b], 0.01, [Wire(("A", "out"), ("B", "inp"), mode)])


def random_twin(rng: random.Random, max_domains: int = 3, max_models: int = 4,
                period_choices=(0.01, 0.02, 0.025, 0.05)):
    """Random multi-domain twin with delayed wires and FIFO channels."""
    n_dom = rng.randint(1, max_domains)
    domains, channels = [], []
    spec = []
    for d in range(n_dom):
        models = []
        for m in range(rng.randint(1, max_models)):
            n_in = rng.randint(0, 3)
            n_out = rng.randint(1, 3)
            ins = tuple(f"i{k}" for k in range(n_in))
            outs = tuple(f"o{k}" for k in range(n_out))
            deps = {o: tuple(p for p in ins if rng.random() < 0.5) for o in outs}
            models.append(Gate(f"d{d}m{m}", ins, outs, deps, salt=rng.randint(0, 99)))
        spec.append(models)
    free_inputs = {(d, m.name, p) for d, ms in enumerate(spec) for m in ms for p in m.inputs}
    outputs = [(d, m.name, p) for d, ms in enumerate(spec) for m in ms for p in m.outputs]
    wires: dict[int, list[Wire]] = {d: [] for d in range(n_dom)}
    for sink in sorted(free_inputs):
        r = rng.random()
        if r < 0.4:
            same = [o for o in outputs if o[0] == sink[0]]
            src = rng.choice(same)
            wires[sink[0]].append(Wire(src[1:], sink[1:], WireMode.DELAYED))
        elif r < 0.7 and n_dom > 1:
            other = [o for o in outputs if o[0] != sink[0]]
            src = rng.choice(other)
            channels.append(FifoChannel((f"D{src[0]}", src[1], src[2]),
                                        (f"D{sink[0]}", sink[1], sink[2]), 10 ** 6))
    for d, models in enumerate(spec):
        domains.append(ClockDomain(f"D{d}", models, rng.choice(period_choices), wires[d]))
    for ch in channels:
        domains[int(ch.source[0][1:])].attach_outbound(ch)
        domains[int(ch.sink[0][1:])].attach_inbound(ch)
    return domains, channels


def seeded_env(seed: int):
    """Environment provider: a pure function of (seed, domain, tick)."""
    def env(domain, tick):
        r = random.Random(hash((seed, domain.name, tick.n)) & 0xFFFFFFFF)
        return {name: round(r.random(), 3) for name in domain.environment_inputs
                if r.random() < 0.5}
    return env


def cycle_nodes(graph: Mapping[str, Iterable[str]]) -> set[str]:
    """Nodes lying on a directed cycle (brute force reachability)."""
    nodes = set(graph) | {w for vs in graph.values() for w in vs}
    reach = {v: set(graph.get(v, ())) for v in nodes}
    changed = True
    while changed:
        changed = False
        for v in nodes:
            extra = set().union(*(reach[w] for w in reach[v])) - reach[v] if reach[v] else set()
            if extra:
                reach[v] |= extra
                changed = True
    return {v for v in nodes if v in reach[v]}


def powerset(items):
    items = list(items)
    return itertools.chain.from_iterable(itertools.combinations(items, k)
                                         for k in range(len(items) + 1))


def petri_oracle(places, transitions, marking, valuation):
    """Reference step for level-guarded nets, written as a search.

    Among transition subsets whose members are all guard- and token-enabled
    and whose combined demand fits the marking, the step fires the unique
    largest one; ``None`` is returned when no such unique maximum exists
    (competing transitions). ``transitions`` holds (inputs, outputs, guard)
    triples with place indices; ``marking`` is a tuple of token counts.
    """
    n = len(transitions)
    valid = []
    for k in range(1 << n):
        chosen = [transitions[i] for i in range(n) if k >> i & 1]
        ok = True
        need = [0] * len(places)
        for ins, _, guard in chosen:
            if guard is not None and not valuation.get(guard, False):
                ok = False
                break
            for p in ins:
                need[p] += 1
                if marking[p] < 1:
                    ok = False
        if ok and all(need[p] <= marking[p] for p in range(len(places))):
            valid.append(k)
    best = max(valid, key=lambda k: bin(k).count("1"))
    if any(k | best != best for k in valid):
        return None
    new = list(marking)
    for i in range(n):
        if best >> i & 1:
            ins, outs, _ = transitions[i]
            for p in ins:
                new[p] -= 1
            for p in outs:
                new[p] += 1
    return tuple(new)


# ------------------------------------------------------------ LTL oracle
# Semantic reference for good/bad prefixes, independent of formula
# progression.  Infinite continuations are sampled as lasso words u v^w; the
# set of subformula truth assignments they realize at their first position
# ("suffix types") is then pushed backwards through every finite prefix.
import numpy as np  # noqa: E402

from galstwin.ltl import (And, Atom, Const, Eventually, Next, NotAtom, Or,  # noqa: E402
                          Until)


def subformulas(f) -> list:
    out: dict = {}

    def walk(g):
        if isinstance(g, (Next, Eventually)):
            walk(g.arg)
        elif isinstance(g, (And, Or, Until)):
            walk(g.left)
            walk(g.right)
        out.setdefault(g, None)

    walk(f)
    return list(out)  # children before parents


def formulas_up_to_depth(atoms, max_depth: int) -> list:
    """All formulas over ``atoms`` built from atoms, negated atoms, X, F, &,
    | and U, with depth at most ``max_depth`` (atom = 1, ``!a`` = 2)."""
    levels = [[Atom(a) for a in atoms]]
    for d in range(2, max_depth + 1):
        prev = levels[-1]
        cur = dict.fromkeys(prev)
        if d == 2:
            cur.update(dict.fromkeys(NotAtom(Atom(a)) for a in atoms))
        for f in prev:
            cur.setdefault(Next(f))
            cur.setdefault(Eventually(f))
        for f in prev:
            for g in prev:
                for op in (And, Or, Until):
                    cur.setdefault(op(f, g))
        levels.append(list(cur))
    return levels[-1]


class LassoBank:
    """All lasso words u v^w with |u| <= max_u, 1 <= |v| <= max_v."""

    def __init__(self, atoms, max_u: int, max_v: int):
        self.atoms = tuple(atoms)
        k = 1 << len(self.atoms)
        self.shapes = []
        for nu in range(max_u + 1):
            for nv in range(1, max_v + 1):
                n = nu + nv
                words = np.array(np.meshgrid(*[np.arange(k)] * n, indexing="ij")).reshape(n, -1).T
                succ = list(range(1, n)) + [nu]
                self.shapes.append((words, succ))
        self._memo: dict = {}

    def truth(self, f) -> list:
        """Per shape, a (words, positions) boolean array."""
        hit = self._memo.get(f)
        if hit is not None:
            return hit
        out = []
        for idx, (words, succ) in enumerate(self.shapes):
            n = words.shape[1]
            if isinstance(f, Atom):
                v = ((words >> self.atoms.index(f.name)) & 1).astype(bool)
            elif isinstance(f, NotAtom):
                v = ~(((words >> self.atoms.index(f.atom.name)) & 1).astype(bool))
            elif isinstance(f, Const):
                v = np.full(words.shape, f.value)
            elif isinstance(f, And):
                v = self.truth(f.left)[idx] & self.truth(f.right)[idx]
            elif isinstance(f, Or):
                v = self.truth(f.left)[idx] | self.truth(f.right)[idx]
            elif isinstance(f, Next):
                v = self.truth(f.arg)[idx][:, succ]
            else:
                if isinstance(f, Eventually):
                    hold = np.ones(words.shape, dtype=bool)
                    goal = self.truth(f.arg)[idx]
                else:
                    hold = self.truth(f.left)[idx]
                    goal = self.truth(f.right)[idx]
                v = goal.copy()
                for _ in range(n):  # least fixpoint
                    v = goal | (hold & v[:, succ])
            out.append(v)
        self._memo[f] = out
        return out

    def types(self, subs) -> np.ndarray:
        """Distinct truth assignments of ``subs`` at position 0, one per row."""
        cols = [np.concatenate([t[:, 0] for t in self.truth(g)]) for g in subs]
        return np.unique(np.stack(cols, axis=1), axis=0)


def oracle_verdicts(f, atoms, max_len: int, bank: LassoBank) -> list[np.ndarray]:
    """Verdict codes (0 pending, 1 accepted, 2 rejected) for every word of
    length 0..max_len; words are indexed base 2^|atoms|, first letter most
    significant."""
    subs = subformulas(f)
    pos = {g: i for i, g in enumerate(subs)}
    types = bank.types(subs)                      # (T, S)
    k = 1 << len(atoms)
    cur = types.T[None, :, :]                     # (1 word, S, T)
    levels = [cur]
    for _ in range(max_len):
        blocks = []
        for letter in range(k):
            nxt = np.empty_like(cur)
            for g in subs:
                i = pos[g]
                if isinstance(g, Atom):
                    nxt[:, i] = bool(letter >> atoms.index(g.name) & 1)
                elif isinstance(g, NotAtom):
                    nxt[:, i] = not (letter >> atoms.index(g.atom.name) & 1)
                elif isinstance(g, Const):
                    nxt[:, i] = g.value
                elif isinstance(g, And):
                    nxt[:, i] = nxt[:, pos[g.left]] & nxt[:, pos[g.right]]
                elif isinstance(g, Or):
                    nxt[:, i] = nxt[:, pos[g.left]] | nxt[:, pos[g.right]]
                elif isinstance(g, Next):
                    nxt[:, i] = cur[:, pos[g.arg]]
                elif isinstance(g, Eventually):
                    nxt[:, i] = nxt[:, pos[g.arg]] | cur[:, i]
                else:
                    nxt[:, i] = nxt[:, pos[g.right]] | (nxt[:, pos[g.left]] & cur[:, i])
            blocks.append(nxt)
        cur = np.concatenate(blocks)
        levels.append(cur)
    out = []
    for arr in levels:
        top = arr[:, pos[f]]
        out.append(np.where(top.all(axis=1), 1, np.where(~top.any(axis=1), 2, 0)))
    return out


def monitor_verdicts(automaton, max_len: int) -> list[np.ndarray]:
    """Verdict codes of a compiled observer after reading each word."""
    delta = np.array(automaton.delta)
    code = np.array([{"Pending": 0, "Accepted": 1, "Rejected": 2}[automaton.classify(s)]
                     for s in range(automaton.size)])
    k = delta.shape[1]
    states = np.array([automaton.initial])
    out = [code[states]]
    for _ in range(max_len):
        states = delta[np.repeat(states, k), np.tile(np.arange(k), states.size)]
        out.append(code[states])
    return out
