"""Random and mutated DSL sources for robustness testing."""
from __future__ import annotations

import random

from corpus import NAMED, random_source

VOCAB = [
    "kernel", "input", "local", "output", "unroll", "iterate", "factor", ":", ",", "(", ")", "=",
    "+", "-", "*", "/", "*", "int", "long", "float", "double", "a", "b", "t", "blur_x", "image",
    "0", "1", "-1", "3", "0.5", "1e3", "1e999", "99999999999999999999", "0x10", "2.", ".5",
    "#", "\n", " ", "\t", "__", "é", "\x00", "\"", "[", "]", ";",
]
CHARS = "abcxyz019()+-*/=:,.#*_ \t\n\r" + "\x00\x7fé中​\U0001f600"


def _seed_texts(rng: random.Random) -> str:
    if rng.random() < 0.5:
        return rng.choice(list(NAMED.values()))
    return random_source(rng.randrange(10 ** 6), max_rank=3, elem=rng.choice(["int", "long", "float", "double"]))


def _mutate(text: str, rng: random.Random) -> str:
    op = rng.randrange(9)
    n = len(text)
    i = rng.randrange(n + 1)
    if op == 0 and n:
        j = min(n, i + rng.randint(1, 8))
        return text[:i] + text[j:]
    if op == 1:
        return text[:i] + rng.choice(CHARS) + text[i:]
    if op == 2 and n:
        return text[:i] + rng.choice(CHARS) + text[i + 1:]
    lines = text.split("\n")
    if op == 3:
        k = rng.randrange(len(lines))
        lines.insert(k, lines[k])
    elif op == 4 and len(lines) > 1:
        a, b = rng.randrange(len(lines)), rng.randrange(len(lines))
        lines[a], lines[b] = lines[b], lines[a]
    elif op == 5:
        del lines[rng.randrange(len(lines))]
    elif op == 6:
        words = text.split(" ")
        words[rng.randrange(len(words))] = rng.choice(VOCAB)
        return " ".join(words)
    elif op == 7:
        return text[:i]
    else:
        return text[:i] + " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 6))) + text[i:]
    return "\n".join(lines)


def fuzz_input(seed: int) -> str:
    """One fuzz case: a mutated valid program, a token soup or raw noise."""
    rng = random.Random(seed)
    kind = rng.random()
    if kind < 0.75:
        text = _seed_texts(rng)
        for _ in range(rng.randint(1, 4)):
            text = _mutate(text, rng)
        return text
    if kind < 0.95:
        return " ".join(rng.choice(VOCAB) for _ in range(rng.randint(0, 40)))
    return "".join(chr(rng.randrange(0x250)) for _ in range(rng.randint(0, 80)))
