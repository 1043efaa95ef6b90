#!/usr/bin/env python3
"""Writes the 12-synset WNDB fixture used by the unit tests.

Offsets in data.* files are byte positions, so they are computed here rather
than written by hand. Re-run after editing SYNSETS:

    python3 tests/fixtures/make_mini_wordnet.py tests/fixtures/mini_wordnet
"""
import os
import sys

HEADER = [
    "  1 Mini lexical database fixture for unit tests.  ",
    "  2 WordNet 3.0 format; not the real database.  ",
]

# key: (pos, ss_type, [lemmas], [(ptr_symbol, target_key)], gloss)
SYNSETS = {
    "entity": ("noun", "n", ["entity"], [], "that which exists"),
    "physical_entity": ("noun", "n", ["physical_entity"], [("@", "entity")], "an entity with physical existence"),
    "idea": ("noun", "n", ["idea", "thought"], [("@", "entity")], "the content of cognition"),
    "canine": ("noun", "n", ["canine", "canid"], [("@", "physical_entity")], "dogs and their relatives"),
    "dog": ("noun", "n", ["dog", "domestic_dog"], [("@", "canine")], "a domesticated canid"),
    "wolf": ("noun", "n", ["wolf"], [("@i", "canine")], "a wild canid"),
    "move": ("verb", "v", ["move", "travel"], [], "change location"),
    "run": ("verb", "v", ["run"], [("@", "move")], "move fast on foot"),
    "walk": ("verb", "v", ["walk"], [("@", "move")], "move on foot"),
    "chromatic": ("adj", "a", ["chromatic"], [("&", "red"), ("&", "blue")], "having color"),
    "red": ("adj", "s", ["red", "reddish"], [("&", "chromatic")], "of the color of blood"),
    "blue": ("adj", "s", ["blue(a)"], [("&", "chromatic")], "of the color of the sky"),
}

POS_LETTER = {"noun": "n", "verb": "v", "adj": "a", "adv": "r"}


def main(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    header = "".join(line + "\n" for line in HEADER)
    offsets = {}
    # Offsets are fixed-width, so lay out each file twice: once to learn the
    # byte positions, once to write them.
    for _ in range(2):
        files = {}
        for pos in POS_LETTER:
            body = header
            for key, (p, ss_type, lemmas, ptrs, gloss) in SYNSETS.items():
                if p != pos:
                    continue
                offsets[key] = len(body.encode())
                words = " ".join(f"{w} 0" for w in lemmas)
                ptr_str = " ".join(
                    f"{sym} {offsets.get(t, 0):08d} {'a' if SYNSETS[t][0] == 'adj' else POS_LETTER[SYNSETS[t][0]]} 0000"
                    for sym, t in ptrs
                )
                fields = [f"{offsets[key]:08d}", "00", ss_type, f"{len(lemmas):02x}", words, f"{len(ptrs):03d}"]
                if ptr_str:
                    fields.append(ptr_str)
                if p == "verb":
                    fields.append("00")
                body += " ".join(fields) + " | " + gloss + "  \n"
            files[pos] = body
    for pos, body in files.items():
        with open(os.path.join(out_dir, f"data.{pos}"), "w") as f:
            f.write(body)

    for pos, letter in POS_LETTER.items():
        index = {}
        for key, (p, _, lemmas, ptrs, _) in SYNSETS.items():
            if p != pos:
                continue
            for w in lemmas:
                lemma = w.split("(")[0].lower()
                index.setdefault(lemma, []).append((key, sorted({s for s, _ in ptrs})))
        lines = []
        for lemma in sorted(index):
            senses = index[lemma]
            ptr_symbols = sorted({s for _, syms in senses for s in syms})
            parts = [lemma, letter, str(len(senses)), str(len(ptr_symbols))] + ptr_symbols
            parts += [str(len(senses)), "0"] + [f"{offsets[k]:08d}" for k, _ in senses]
            lines.append(" ".join(parts) + "  \n")
        with open(os.path.join(out_dir, f"index.{pos}"), "w") as f:
            f.write(header + "".join(lines))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "mini_wordnet"))
