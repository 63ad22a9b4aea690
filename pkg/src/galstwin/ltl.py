"""Co-safe LTL observers.

Formulas are parsed into a small AST and compiled into a deterministic
automaton by formula progression.  A state is accepting when its residual
formula is valid (every infinite continuation satisfies the property) and
rejecting when the residual is unsatisfiable, so verdicts follow good/bad
prefix semantics rather than syntactic progression alone.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping

__all__ = [
    "Formula", "Atom", "NotAtom", "Const", "And", "Or", "Next", "Until", "Eventually",
    "parse_ltl", "to_automaton", "observer_step", "ObserverAutomaton", "Verdict",
    "Observer", "LtlSyntaxError", "NotCoSafe", "StateBlowup", "UnknownAtom",
    "atoms_of", "depth",
]


class LtlSyntaxError(SyntaxError):
    def __init__(self, msg: str, text: str, position: int):
        self.position = position
        super().__init__(f"{msg} at position {position}")
        self.text = text
        self.offset = position + 1


class NotCoSafe(ValueError):
    pass


class StateBlowup(RuntimeError):
    pass


class UnknownAtom(KeyError):
    pass


# ------------------------------------------------------------------- AST
class Formula:
    __slots__ = ()

    def __str__(self) -> str:
        return _show(self)


@dataclass(frozen=True)
class Atom(Formula):
    name: str


@dataclass(frozen=True)
class NotAtom(Formula):
    atom: Atom


@dataclass(frozen=True)
class Const(Formula):
    value: bool


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Eventually(Formula):
    arg: Formula


def _show(f: Formula) -> str:
    if isinstance(f, Atom):
        return f.name
    if isinstance(f, NotAtom):
        return f"!{f.atom.name}"
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Next):
        return f"X {_paren(f.arg)}"
    if isinstance(f, Eventually):
        return f"F {_paren(f.arg)}"
    op = {And: "&", Or: "|", Until: "U"}[type(f)]
    return f"{_paren(f.left)} {op} {_paren(f.right)}"


def _paren(f: Formula) -> str:
    s = _show(f)
    return s if isinstance(f, (Atom, NotAtom, Const)) else f"({s})"


def atoms_of(f: Formula) -> frozenset[str]:
    if isinstance(f, Atom):
        return frozenset((f.name,))
    if isinstance(f, NotAtom):
        return frozenset((f.atom.name,))
    if isinstance(f, Const):
        return frozenset()
    if isinstance(f, (Next, Eventually)):
        return atoms_of(f.arg)
    return atoms_of(f.left) | atoms_of(f.right)


def depth(f: Formula) -> int:
    """Tree depth; an atom is depth 1 and ``!a`` depth 2."""
    if isinstance(f, (Atom, Const)):
        return 1
    if isinstance(f, NotAtom):
        return 2
    if isinstance(f, (Next, Eventually)):
        return 1 + depth(f.arg)
    return 1 + max(depth(f.left), depth(f.right))


# ----------------------------------------------------------------- parser
_TOKEN = re.compile(r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_.\-]*)|(?P<op>[!&|()]))")
_KEYWORDS = {"X", "F", "G", "U"}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise LtlSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        start = m.start(m.lastgroup)
        word = m.group(m.lastgroup)
        if m.lastgroup == "ident":
            kind = word if word in _KEYWORDS else ("const" if word in ("true", "false") else "ident")
        else:
            kind = word
        tokens.append((kind, word, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self, kind: str | None = None) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise LtlSyntaxError(f"expected {kind!r}, found {what}", self.text, tok[2])
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.disjunction()
        tok = self.peek()
        if tok[0] != "end":
            raise LtlSyntaxError(f"unexpected {tok[1]!r}", self.text, tok[2])
        return f

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.peek()[0] == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.until()
        while self.peek()[0] == "&":
            self.take()
            f = And(f, self.until())
        return f

    def until(self) -> Formula:
        f = self.unary()
        if self.peek()[0] == "U":
            self.take()
            return Until(f, self.until())
        return f

    def unary(self) -> Formula:
        kind, word, pos = self.peek()
        if kind == "!":
            self.take()
            arg = self.unary()
            if isinstance(arg, Atom):
                return NotAtom(arg)
            if isinstance(arg, Const):
                return Const(not arg.value)
            raise NotCoSafe(f"negation of a non-atomic formula at position {pos}")
        if kind == "X":
            self.take()
            return Next(self.unary())
        if kind == "F":
            self.take()
            return Eventually(self.unary())
        if kind == "G":
            raise NotCoSafe(f"operator G at position {pos} is not co-safe")
        return self.primary()

    def primary(self) -> Formula:
        kind, word, pos = self.peek()
        if kind == "ident":
            self.take()
            return Atom(word)
        if kind == "const":
            self.take()
            return Const(word == "true")
        if kind == "(":
            self.take()
            f = self.disjunction()
            self.take(")")
            return f
        what = "end of input" if kind == "end" else repr(word)
        raise LtlSyntaxError(f"expected a formula, found {what}", self.text, pos)


def parse_ltl(text: str) -> Formula:
    """Parse a co-safe LTL formula.

    Precedence, tightest first: ``!``/``X``/``F``, ``U`` (right
    associative), ``&``, ``|``.
    """
    return _Parser(text).parse()


# ------------------------------------------------------------ progression
# Internal normal form: nested tuples, hashable and totally ordered by repr.
TRUE = ("true",)
FALSE = ("false",)


def _norm(f: Formula) -> tuple:
    if isinstance(f, Atom):
        return ("ap", f.name)
    if isinstance(f, NotAtom):
        return ("nap", f.atom.name)
    if isinstance(f, Const):
        return TRUE if f.value else FALSE
    if isinstance(f, And):
        return _and((_norm(f.left), _norm(f.right)))
    if isinstance(f, Or):
        return _or((_norm(f.left), _norm(f.right)))
    if isinstance(f, Next):
        return ("X", _norm(f.arg))
    if isinstance(f, Eventually):
        a = _norm(f.arg)
        return a if a in (TRUE, FALSE) else ("F", a)
    left, right = _norm(f.left), _norm(f.right)
    if right in (TRUE, FALSE) or left == FALSE:
        return right
    return ("U", left, right)


def _junction(kind: str, parts: Iterable[tuple], unit: tuple, zero: tuple) -> tuple:
    flat: set[tuple] = set()
    for p in parts:
        if p == zero:
            return zero
        if p == unit:
            continue
        if p[0] == kind:
            flat.update(p[1])
        else:
            flat.add(p)
    for p in flat:
        if p[0] == "ap" and ("nap", p[1]) in flat:
            return zero
    if not flat:
        return unit
    if len(flat) == 1:
        return next(iter(flat))
    return (kind, tuple(sorted(flat, key=repr)))


def _and(parts: Iterable[tuple]) -> tuple:
    return _junction("and", parts, TRUE, FALSE)


def _or(parts: Iterable[tuple]) -> tuple:
    return _junction("or", parts, FALSE, TRUE)


def _progress(f: tuple, letter: Mapping[str, bool]) -> tuple:
    tag = f[0]
    if tag == "true" or tag == "false":
        return f
    if tag == "ap":
        return TRUE if letter[f[1]] else FALSE
    if tag == "nap":
        return FALSE if letter[f[1]] else TRUE
    if tag == "and":
        return _and(_progress(g, letter) for g in f[1])
    if tag == "or":
        return _or(_progress(g, letter) for g in f[1])
    if tag == "X":
        return f[1]
    if tag == "F":
        return _or((_progress(f[1], letter), f))
    # until
    return _or((_progress(f[2], letter), _and((_progress(f[1], letter), f))))


def _clauses(f: tuple) -> set[frozenset]:
    """DNF as a set of conjunctive clauses over non-boolean leaves."""
    tag = f[0]
    if tag == "true":
        return {frozenset()}
    if tag == "false":
        return set()
    if tag == "or":
        out: set[frozenset] = set()
        for g in f[1]:
            out |= _clauses(g)
        return out
    if tag == "and":
        out = {frozenset()}
        for g in f[1]:
            out = {a | b for a in out for b in _clauses(g)}
        return out
    return {frozenset((f,))}


def _canon(f: tuple) -> tuple:
    """Minimal DNF: contradictory and absorbed clauses removed.

    Residuals are then boolean combinations over a finite leaf set, which
    keeps the progression state space finite (``a | (a & b)`` collapses).
    """
    clauses = [c for c in _clauses(f)
               if not any(p[0] == "ap" and ("nap", p[1]) in c for p in c)]
    clauses = [c for c in clauses if not any(o < c for o in clauses)]
    if not clauses:
        return FALSE
    if frozenset() in clauses:
        return TRUE
    terms = []
    for c in clauses:
        lits = sorted(c, key=repr)
        terms.append(lits[0] if len(lits) == 1 else ("and", tuple(lits)))
    terms.sort(key=repr)
    return terms[0] if len(terms) == 1 else ("or", tuple(terms))


def _show_norm(f: tuple) -> str:
    tag = f[0]
    if tag in ("true", "false"):
        return tag
    if tag == "ap":
        return f[1]
    if tag == "nap":
        return "!" + f[1]
    if tag in ("and", "or"):
        sep = " & " if tag == "and" else " | "
        return "(" + sep.join(_show_norm(g) for g in f[1]) + ")"
    if tag == "X":
        return f"X {_show_norm(f[1])}"
    if tag == "F":
        return f"F {_show_norm(f[1])}"
    return f"({_show_norm(f[1])} U {_show_norm(f[2])})"


# --------------------------------------------------------------- automaton
@dataclass(frozen=True)
class Verdict:
    kind: str  # Pending | Accepted | Rejected
    tick: int | None = None

    @property
    def final(self) -> bool:
        return self.kind != "Pending"

    def to_dict(self) -> dict:
        return {"verdict": self.kind, "tick": self.tick}


PENDING = Verdict("Pending")


@dataclass(frozen=True)
class ObserverAutomaton:
    """Deterministic, total automaton over valuations of ``atoms``.

    Letter ``k`` sets atom ``atoms[i]`` true iff bit ``i`` of ``k`` is set.
    """

    atoms: tuple[str, ...]
    labels: tuple[str, ...]
    initial: int
    delta: tuple[tuple[int, ...], ...]
    accepting: frozenset[int]
    rejecting: frozenset[int]

    @property
    def size(self) -> int:
        return len(self.labels)

    def letter(self, valuation: Mapping[str, object]) -> int:
        k = 0
        for i, a in enumerate(self.atoms):
            if valuation.get(a):
                k |= 1 << i
        return k

    def step(self, state: int, valuation: Mapping[str, object]) -> int:
        return self.delta[state][self.letter(valuation)]

    def classify(self, state: int) -> str:
        if state in self.accepting:
            return "Accepted"
        if state in self.rejecting:
            return "Rejected"
        return "Pending"

    def dump(self) -> str:
        """Transition table, one line per state and letter."""
        lines = [f"atoms: {' '.join(self.atoms) or '-'}", f"initial: {self.initial}"]
        for s, label in enumerate(self.labels):
            mark = {"Accepted": " [accept]", "Rejected": " [reject]"}.get(self.classify(s), "")
            lines.append(f"state {s}{mark}: {label}")
            for k, t in enumerate(self.delta[s]):
                bits = ",".join(f"{a}={(k >> i) & 1}" for i, a in enumerate(self.atoms))
                lines.append(f"  {bits or '-'} -> {t}")
        return "\n".join(lines)


def to_automaton(f: Formula, max_states: int = 4096,
                 atoms: Iterable[str] | None = None) -> ObserverAutomaton:
    """Compile a co-safe formula into a good/bad-prefix observer."""
    names = tuple(sorted(set(atoms) if atoms is not None else atoms_of(f)))
    missing = atoms_of(f) - set(names)
    if missing:
        raise UnknownAtom(f"formula atoms not in alphabet: {sorted(missing)}")
    letters = [{a: bool((k >> i) & 1) for i, a in enumerate(names)}
               for k in range(1 << len(names))]
    init = _canon(_norm(f))
    index = {init: 0}
    order = [init]
    succ: list[list[int]] = []
    i = 0
    while i < len(order):
        cur = order[i]
        row = []
        for letter in letters:
            nxt = _canon(_progress(cur, letter))
            j = index.get(nxt)
            if j is None:
                if len(order) >= max_states:
                    raise StateBlowup(f"more than {max_states} observer states")
                j = index[nxt] = len(order)
                order.append(nxt)
            row.append(j)
        succ.append(row)
        i += 1

    n = len(order)
    preds: list[set[int]] = [set() for _ in range(n)]
    for s, row in enumerate(succ):
        for t in row:
            preds[t].add(s)
    # states that can still reach 'true' (satisfiable residuals)
    can_accept = set()
    frontier = [s for s in range(n) if order[s] == TRUE]
    can_accept.update(frontier)
    while frontier:
        t = frontier.pop()
        for s in preds[t]:
            if s not in can_accept:
                can_accept.add(s)
                frontier.append(s)
    # states from which every path reaches 'true' (valid residuals)
    valid = {s for s in range(n) if order[s] == TRUE}
    remaining = [len(set(row)) for row in succ]
    distinct = [set(row) for row in succ]
    frontier = list(valid)
    while frontier:
        t = frontier.pop()
        for s in preds[t]:
            if s in valid or t not in distinct[s]:
                continue
            remaining[s] -= 1
            if remaining[s] == 0:
                valid.add(s)
                frontier.append(s)

    # collapse accepting and rejecting classes, keep reachable states only
    def cls(s: int):
        if s in valid:
            return "acc"
        if s not in can_accept:
            return "rej"
        return s

    new_index: dict[object, int] = {}
    labels: list[str] = []
    rows: list[list[int]] = []
    queue = [cls(0)]
    new_index[queue[0]] = 0
    reps = {cls(s): s for s in range(n)}
    k = 0
    while k < len(queue):
        c = queue[k]
        labels.append({"acc": "true", "rej": "false"}.get(c, None) or _show_norm(order[c]))
        row = []
        for t in succ[reps[c]]:
            ct = cls(t)
            if ct not in new_index:
                new_index[ct] = len(queue)
                queue.append(ct)
            row.append(new_index[ct])
        rows.append(row)
        k += 1
    acc = frozenset(new_index[c] for c in new_index if c == "acc")
    rej = frozenset(new_index[c] for c in new_index if c == "rej")
    return ObserverAutomaton(names, tuple(labels), 0, tuple(tuple(r) for r in rows), acc, rej)


def observer_step(a: ObserverAutomaton, state: int, valuation: Mapping[str, object],
                  tick: int | None = None) -> tuple[int, Verdict]:
    """One transition; final states are absorbing so verdicts never change."""
    if state in a.accepting or state in a.rejecting:
        return state, Verdict(a.classify(state), tick)
    nxt = a.step(state, valuation)
    kind = a.classify(nxt)
    return nxt, (PENDING if kind == "Pending" else Verdict(kind, tick))


class Observer:
    """A stateful monitor instance bound to a set of signal names."""

    def __init__(self, spec: str, name: str = "observer",
                 signals: Iterable[str] | None = None, max_states: int = 4096):
        self.spec = spec
        self.name = name
        self.formula = parse_ltl(spec)
        if signals is not None:
            known = set(signals)
            unknown = sorted(atoms_of(self.formula) - known)
            if unknown:
                raise UnknownAtom(f"unknown signal(s) {unknown}")
        self.automaton = to_automaton(self.formula, max_states=max_states)
        self.state = self.automaton.initial
        self.verdict = PENDING

    @property
    def atoms(self) -> tuple[str, ...]:
        return self.automaton.atoms

    def step(self, valuation: Mapping[str, object], tick: int | None = None) -> bool:
        """Advance one tick; True when the verdict changed on this step."""
        if self.verdict.final:
            return False
        self.state, v = observer_step(self.automaton, self.state, valuation, tick)
        if v.final:
            self.verdict = v
            return True
        return False
