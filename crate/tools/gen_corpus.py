"""Writes data/corpus.txt: deterministic English-like prose for byte-level training."""

import random
import sys
from pathlib import Path

NAMES = ["Anna", "Tom", "the miller", "the old captain", "Mary", "the doctor", "John", "the widow",
         "the young clerk", "Elizabeth", "the farmer", "Peter", "the stranger", "the schoolmaster"]
NOUNS = ["house", "river", "letter", "garden", "road", "window", "horse", "ship", "village", "book",
         "door", "field", "lamp", "bridge", "table", "church", "forest", "hill", "storm", "fire",
         "market", "coat", "key", "bell", "boat", "mountain", "well", "cart", "wall", "gate"]
ADJS = ["old", "small", "dark", "quiet", "bright", "cold", "long", "narrow", "broken", "green",
        "heavy", "empty", "distant", "wet", "warm", "strange", "high", "plain", "red", "grey"]
VERBS = ["saw", "opened", "found", "carried", "watched", "left", "crossed", "reached", "closed",
         "remembered", "passed", "followed", "mended", "sold", "painted", "lost", "kept", "climbed"]
INTRANS = ["waited", "laughed", "slept", "returned", "listened", "walked on", "said nothing",
           "sat down", "stood still", "went home", "looked away", "smiled"]
PREPS = ["by", "near", "beyond", "under", "behind", "across", "beside", "toward", "above", "through"]
TIMES = ["In the morning", "At night", "Before the winter", "After supper", "On Sunday",
         "Later that year", "When the rain stopped", "Long ago", "At last", "That evening"]
SPEECH = ["I shall come back tomorrow", "the road is longer than it looks", "we must not wait",
          "nobody lives there now", "the letter came too late", "it will rain before dark",
          "you may keep the key", "the bell has not rung for years"]


def zipf(rng, xs):
    w = [1.0 / (i + 1) for i in range(len(xs))]
    return rng.choices(xs, weights=w)[0]


def np(rng):
    s = "the " + (zipf(rng, ADJS) + " " if rng.random() < 0.5 else "") + zipf(rng, NOUNS)
    if rng.random() < 0.25:
        s += " " + rng.choice(PREPS) + " the " + zipf(rng, NOUNS)
    return s


def sentence(rng):
    who = zipf(rng, NAMES)
    r = rng.random()
    if r < 0.45:
        s = f"{who} {zipf(rng, VERBS)} {np(rng)}"
    elif r < 0.65:
        s = f"{who} {rng.choice(INTRANS)} {rng.choice(PREPS)} {np(rng)}"
    elif r < 0.8:
        s = f"{rng.choice(TIMES)}, {who} {zipf(rng, VERBS)} {np(rng)}"
    elif r < 0.9:
        s = f'"{rng.choice(SPEECH).capitalize()}," said {who}'
    else:
        s = f"{np(rng)} was {zipf(rng, ADJS)}, and {who} {rng.choice(INTRANS)}"
    if rng.random() < 0.2:
        s += f", and then {zipf(rng, NAMES)} {rng.choice(INTRANS)}"
    return s[0].upper() + s[1:] + "."


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/corpus.txt")
    rng = random.Random(1851)
    paras = []
    size = 0
    while size < 1_200_000:
        p = " ".join(sentence(rng) for _ in range(rng.randint(3, 9)))
        paras.append(p)
        size += len(p) + 2
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n\n".join(paras) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
