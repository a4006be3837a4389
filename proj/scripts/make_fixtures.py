#!/usr/bin/env python3
"""Regenerates the synthetic fixtures under fixtures/.

keywords/   2 classes, 200/50/50. Every sentence holds one or two keywords of
            its class among filler words, so a bag-of-keywords rule labels
            every line correctly.
pairs/      3-class sentence pairs in the SNLI layout, 300/60/60.
questions/  6-class question-type data with TREC's split sizes
            (5452/500/500); a surrogate for format and runtime checks.
"""
import os
import random

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")

FILLER = (
    "the a an this that movie film story plot actor scene music was is were "
    "really quite very somewhat rather just still also and but so it its of "
    "in on at with for about from by to as script cast ending start middle "
    "camera light sound dialogue pace tone style look feel work time night "
    "day people friend city house road"
).split()

POS = "great excellent wonderful superb delightful brilliant moving charming".split()
NEG = "awful terrible boring dreadful tedious clumsy bland painful".split()


def sentence(rng, keywords, n_kw):
    words = [rng.choice(FILLER) for _ in range(rng.randint(4, 10))]
    for _ in range(n_kw):
        words.insert(rng.randrange(len(words) + 1), rng.choice(keywords))
    text = " ".join(words)
    if rng.random() < 0.3:
        text += rng.choice([" .", " !", " ..."])
    return text


def write(path, lines):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def keywords(rng):
    def split(n):
        out = []
        for i in range(n):
            label = "pos" if i % 2 == 0 else "neg"
            kws = POS if label == "pos" else NEG
            out.append(f"{label}\t{sentence(rng, kws, rng.randint(1, 2))}")
        rng.shuffle(out)
        return out

    for name, n in (("train", 200), ("dev", 50), ("test", 50)):
        write(os.path.join(ROOT, "keywords", f"{name}.tsv"), split(n))


def pairs(rng):
    cue = {"entailment": "indeed", "contradiction": "never", "neutral": "perhaps"}
    labels = list(cue)

    def split(n):
        out = []
        for i in range(n):
            label = labels[i % 3]
            s1 = sentence(rng, FILLER, 0)
            s2 = sentence(rng, [cue[label]], 1)
            out.append(f"{label}\t{s1}\t{s2}")
        rng.shuffle(out)
        return out

    for name, n in (("train", 300), ("dev", 60), ("test", 60)):
        write(os.path.join(ROOT, "pairs", f"{name}.tsv"), split(n))


QTYPES = {
    "HUM": ["who", "whom", "whose"],
    "LOC": ["where", "country", "city"],
    "NUM": ["many", "much", "year"],
    "DESC": ["why", "describe", "meaning"],
    "ENTY": ["which", "kind", "animal"],
    "ABBR": ["stand", "abbreviation", "acronym"],
}
QFILL = (
    "what is the of a in did was does first name largest world known called "
    "used for to made most famous do people team company river war book song "
    "state president game language color"
).split()


def questions(rng):
    labels = list(QTYPES)

    def q(label):
        words = [rng.choice(QFILL) for _ in range(rng.randint(3, 9))]
        for _ in range(rng.randint(1, 2)):
            words.insert(rng.randrange(len(words) + 1), rng.choice(QTYPES[label]))
        return " ".join(words) + " ?"

    def split(n):
        out = []
        for _ in range(n):
            label = rng.choice(labels)
            out.append(f"{label}\t{q(label)}")
        return out

    for name, n in (("train", 5452), ("dev", 500), ("test", 500)):
        write(os.path.join(ROOT, "questions", f"{name}.tsv"), split(n))


if __name__ == "__main__":
    keywords(random.Random(20240601))
    pairs(random.Random(20240602))
    questions(random.Random(20240603))
