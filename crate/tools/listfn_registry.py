"""Regenerates crates/core/data/listfn_registry.tsv.

Programs are pipelines of mini-DSL primitives joined by " | ". Candidates are
enumerated by pipeline length and primitive weight, then deduplicated by
behaviour on a fixed probe set so no two registry entries compute the same
function. Ranks 1-84 hold the cheapest programs, 85-169 two-stage pipelines
and 170-250 three-stage pipelines.

    python3 tools/listfn_registry.py > crates/core/data/listfn_registry.tsv
"""

import itertools
import random

ATOMS = [
    ("id", 0), ("reverse", 1), ("sort", 1), ("sort desc", 1), ("dedup", 1),
    ("head", 1), ("tail", 1), ("count", 1),
]
ATOMS += [(f"take {n}", 2) for n in (1, 2, 3, 4)]
ATOMS += [(f"drop {n}", 2) for n in (1, 2, 3, 4)]
ATOMS += [(f"index {n}", 2) for n in (0, 1, 2, 3)]
ATOMS += [(f"append {n}", 2) for n in (0, 1, 9)]
ATOMS += [(f"filter {p}", 2) for p in ("even", "odd", "gt 50", "lt 50")]
ATOMS += [(f"count {p}", 2) for p in ("even", "odd")]
ATOMS += [(f"map {a}", 2) for a in ("add 1", "add 10", "sub 1", "mul 2", "div 2", "mod 10")]
ATOMS += [(f"filter {p}", 3) for p in ("gt 20", "lt 30", "gt 80", "eq 0", "ne 0", "mod 3 0", "mod 5 0", "mod 10 7")]
ATOMS += [(f"map {a}", 3) for a in ("add 5", "sub 5", "mul 3", "mul 10", "div 3", "div 10", "mod 3", "mod 7")]
ATOMS += [(f"count {p}", 3) for p in ("gt 50", "lt 30", "mod 3 0")]


def pred(spec):
    t = spec.split()
    if t[0] == "even":
        return lambda x: x % 2 == 0
    if t[0] == "odd":
        return lambda x: x % 2 == 1
    n = [int(v) for v in t[1:]]
    return {
        "gt": lambda x: x > n[0],
        "lt": lambda x: x < n[0],
        "eq": lambda x: x == n[0],
        "ne": lambda x: x != n[0],
        "mod": lambda x: x % n[0] == n[1],
    }[t[0]]


def arith(spec):
    op, n = spec.split()
    n = int(n)
    return {
        "add": lambda x: x + n,
        "sub": lambda x: x - n,
        "mul": lambda x: x * n,
        "div": lambda x: x // n,
        "mod": lambda x: x % n,
    }[op]


def step(atom, xs):
    op, _, rest = atom.partition(" ")
    if op == "id":
        return xs
    if op == "reverse":
        return xs[::-1]
    if op == "sort":
        return sorted(xs, reverse=rest == "desc")
    if op == "dedup":
        out = []
        for x in xs:
            if x not in out:
                out.append(x)
        return out
    if op == "head":
        return xs[:1]
    if op == "tail":
        return xs[1:]
    if op == "take":
        return xs[: int(rest)]
    if op == "drop":
        return xs[int(rest):]
    if op == "index":
        i = int(rest)
        return [xs[i]] if i < len(xs) else []
    if op == "append":
        return xs + [int(rest)]
    if op == "filter":
        p = pred(rest)
        return [x for x in xs if p(x)]
    if op == "count":
        if not rest:
            return [len(xs)]
        p = pred(rest)
        return [sum(1 for x in xs if p(x))]
    if op == "map":
        f = arith(rest)
        return [f(x) for x in xs]
    raise ValueError(atom)


def run(program, xs):
    for atom in program:
        xs = step(atom, xs)
    return xs


rng = random.Random(20240601)
PROBES = [[], [0], [7], [5, 5], [3, 1, 2]]
PROBES += [[rng.randrange(100) for _ in range(rng.randrange(0, 17))] for _ in range(300)]


def signature(program):
    return tuple(tuple(run(program, list(p))) for p in PROBES)


def acceptable(sig):
    outs = set(sig)
    if len(outs) <= 2:
        return False
    empty = sum(1 for o in sig if not o)
    return empty <= len(sig) // 2


def cost(program):
    w = dict(ATOMS)
    return sum(w[a] for a in program) + 2 * (len(program) - 1)


def main():
    seen = set()
    chosen = []

    def take_from(cands, limit):
        for prog in cands:
            if len(chosen) >= limit:
                return
            sig = signature(prog)
            if sig in seen or not acceptable(sig):
                continue
            if len(prog) > 1 and any(
                signature(prog[:i] + prog[i + 1:]) == sig for i in range(len(prog))
            ):
                continue
            seen.add(sig)
            chosen.append(prog)

    names = [a for a, _ in ATOMS]
    singles = sorted(([a] for a in names), key=lambda p: (cost(p), names.index(p[0])))
    pairs = [list(p) for p in itertools.product(names[1:], repeat=2)]
    rng.shuffle(pairs)
    pairs.sort(key=cost)
    take_from(singles, 84)
    take_from(pairs, 169)
    triples = [list(p) for p in itertools.product(names[1:], repeat=3)]
    rng.shuffle(triples)
    triples.sort(key=cost)
    take_from(triples, 250)
    assert len(chosen) == 250, len(chosen)

    print("id\trank\tprogram\torigin")
    for i, prog in enumerate(chosen, 1):
        print(f"{i}\t{i}\t{' | '.join(prog)}\tsurrogate")


if __name__ == "__main__":
    main()
