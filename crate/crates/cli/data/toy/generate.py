#!/usr/bin/env python3
"""Regenerates the toy fixtures in this directory. Output is deterministic."""
import random
import struct
from pathlib import Path

HERE = Path(__file__).resolve().parent
DIM = 8

SUBJECTS = [
    ("man", "ein mann"), ("woman", "eine frau"), ("dog", "ein hund"), ("child", "ein kind"),
    ("girl", "ein mädchen"), ("boy", "ein junge"), ("cat", "eine katze"), ("horse", "ein pferd"),
]
VERBS = [("runs", "läuft"), ("sits", "sitzt"), ("jumps", "springt"), ("sleeps", "schläft"), ("plays", "spielt")]
PLACES = [
    ("in the park", "im park"), ("on the beach", "am strand"),
    ("in the snow", "im schnee"), ("on the street", "auf der straße"),
]
EXTRAS = [("", ""), ("in a t-shirt", "im t-shirt")]


def sentence(s, v, p, x):
    en_subj, de_subj = SUBJECTS[s]
    en = " ".join(w for w in ["a", en_subj, EXTRAS[x][0], VERBS[v][0], PLACES[p][0], "."] if w)
    de = " ".join(w for w in [de_subj, EXTRAS[x][1], VERBS[v][1], PLACES[p][1], "."] if w)
    return en, de


def feature(rng, s, p):
    v = [rng.gauss(0.0, 0.05) for _ in range(DIM)]
    v[s] += 1.0
    v[p] += 0.5
    return v


def write_features(path, feats):
    with open(path, "wb") as f:
        f.write(b"MMTVFEAT")
        f.write(struct.pack("<IIQ", 1, DIM, len(feats)))
        for sid, vals in feats:
            f.write(struct.pack("<Q", sid))
            f.write(struct.pack(f"<{DIM}d", *vals))


def write_lines(path, lines):
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def main():
    rng = random.Random(2018)
    combos = [(s, v, p, x) for s in range(8) for v in range(5) for p in range(4) for x in range(2)]
    rng.shuffle(combos)
    train, dev = combos[:32], combos[32:132]
    for name, part, base in [("train", train, 0), ("dev", dev, 1000)]:
        pairs = [sentence(*c) for c in part]
        write_lines(HERE / f"{name}.en", [e for e, _ in pairs])
        write_lines(HERE / f"{name}.de", [d for _, d in pairs])
        feats = [(base + i, feature(rng, c[0], c[2])) for i, c in enumerate(part)]
        write_features(HERE / f"{name}.feat", feats)
        write_lines(HERE / f"{name}.manifest", [str(sid) for sid, _ in feats])

    subs = [
        ("Hello .", "Hallo ."),
        ("Where are you going ?", "Wohin gehst du ?"),
        ("Wait ... what ?", "Was ?"),
        ("I don't know !", "Ich weiß es nicht !"),
        ("Run !!!", "Lauf !"),
        ("Yes . Yes . Yes .", "Ja ."),
        ("The dog sleeps on the street .", "Der Hund schläft auf der Straße ."),
        ("A man runs in the park .", "Ein Mann läuft im Park ."),
        ("&amp;lt;i&amp;gt; Music &amp;lt;/i&amp;gt;", "&lt;i&gt; Musik &lt;/i&gt;"),
        ("Come here , boy .", "Komm her , Junge ."),
        ("- Who ? - Me .", "- Wer ? - Ich ."),
        ("OK", "OK ."),
        ("The cat plays in the snow .", "Die Katze spielt im Schnee ."),
        ("Thank you .", "Danke ."),
        ("What ? ! ?", "Was ?"),
        ("The child jumps on the beach .", "Das Kind springt am Strand ."),
    ]
    write_lines(HERE / "subs.en", [e for e, _ in subs])
    write_lines(HERE / "subs.de", [d for _, d in subs])

    hyphen = [
        "the e-mail arrived with a well-known x-ray image",
        "a state-of-the-art t-shirt for a twenty-one year-old",
        "mother-in-law and father-in-law read the e-mail",
        "self-driving cars need well-known up-to-date maps",
        "an ex-president wrote a long-term plan",
    ]
    write_lines(HERE / "hyphen.en", hyphen)


if __name__ == "__main__":
    main()
