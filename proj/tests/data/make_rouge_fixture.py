# SPDX-License-Identifier: Apache-2.0
"""Independent reference implementation for the ROUGE fixture.

Regenerates rouge_fixture.jsonl and rouge_fixture_expected.json. The C++
metrics must match these values exactly (integer counts) / to 1e-12 (F1).
Run from this directory: python3 make_rouge_fixture.py
"""

import json
import re
from collections import Counter

PAIRS = [
    ("a 2 pound bag of white onions", "a 2 pound bag of white onions"),
    ("a pack of 12 yoo hoo chocolate bar", "a 12 count pack of yoo hoo chocolate milk fridge pack"),
    ("a 7 ounce pack of produce produce produce baby food blend", "a 7 ounce pack of veggie blend snack"),
    ("a 6 pack of 0.5 fluid ounce diet 7 up", "a 6 pack of .5 liter diet 7up"),
    ("a pound of garlic sold individually", "garlic sold individually"),
    ("a 1.5 to 1.5 pound tray of perdue harvestland free range chicken breast",
     "a 1.5 to 2 pound tray of perdue harvestland free range chicken breasts"),
    ("a 20.5 ounce box of lucky charms gluten free cereal",
     "a 19.3 ounce box of lucky charms gluten free cereal"),
    ("a pack of 6 hostess donettes frosted mini donuts", "a pack of 6 hostess donettes mini donuts"),
    ("a 6 count carton of great value large grade aa eggs",
     "a half dozen carton of great value large grade aa eggs"),
    ("a 2 pound bag of yellow onions", "a 3 pound bag of white onions"),
    ("an 8 ounce bag of wonderful roasted and salted pistachios",
     "an 8 ounce bag of wonderful roasted and salted pistachios"),
    ("a family size pack of 8 el monterey frozen beef and cheese burrito",
     "a family size pack of 8 el monterey beef and cheese burritos"),
    ("", "a 2 pound bag of white onions"),
    ("a 2 pound bag of white onions", ""),
    ("one two three", "four five six"),
    ("a a a a", "a"),
    ("b a", "a b"),
    ("a b c d e f", "f e d c b a"),
    ("the cat sat on the mat", "the cat sat on the mat today"),
    ("a 3.1 - 5.1 pound tray of Pork Butt Steaks, Large", "a 3.1 to 5.1 pound tray of pork butt steaks"),
]


def tokenize(text):
    out = []
    for raw in text.split():
        t = []
        for i, c in enumerate(raw):
            if c.isalnum():
                t.append(c.lower())
            elif 0 < i < len(raw) - 1 and raw[i - 1].isdigit() and raw[i + 1].isdigit():
                t.append(c)
        if t:
            out.append("".join(t))
    return out


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(cand, ref, n):
    c, r = ngrams(cand, n), ngrams(ref, n)
    cand_total, ref_total = sum(c.values()), sum(r.values())
    if cand_total == 0 or ref_total == 0:
        return dict(overlap=0, cand_total=cand_total, ref_total=ref_total,
                    p=0.0, r=0.0, f1=0.0, flagged=True)
    overlap = sum(min(cnt, r[g]) for g, cnt in c.items() if g in r)
    p = overlap / cand_total
    rr = overlap / ref_total
    f1 = 2 * p * rr / (p + rr) if p + rr > 0 else 0.0
    return dict(overlap=overlap, cand_total=cand_total, ref_total=ref_total,
                p=p, r=rr, f1=f1, flagged=False)


def lcs_len(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(cand, ref):
    if not cand or not ref:
        return dict(overlap=0, cand_total=len(cand), ref_total=len(ref),
                    p=0.0, r=0.0, f1=0.0, flagged=True)
    ll = lcs_len(cand, ref)
    p, rr = ll / len(cand), ll / len(ref)
    f1 = 2 * p * rr / (p + rr) if p + rr > 0 else 0.0
    return dict(overlap=ll, cand_total=len(cand), ref_total=len(ref),
                p=p, r=rr, f1=f1, flagged=False)


def duplicates(tokens):
    return sum(max(0, c - 1) for c in Counter(tokens).values())


def duplicates_vs_ref(cand, ref):
    rc = Counter(ref)
    return sum(max(0, c - max(1, rc.get(t, 0))) for t, c in Counter(cand).items())


def main():
    with open("rouge_fixture.jsonl", "w") as f:
        for cand, ref in PAIRS:
            f.write(json.dumps({"predicted_voice": cand, "reference_voice": ref}) + "\n")
    expected = []
    for cand, ref in PAIRS:
        ct, rt = tokenize(cand), tokenize(ref)
        expected.append({
            "r1": rouge_n(ct, rt, 1),
            "r2": rouge_n(ct, rt, 2),
            "rl": rouge_l(ct, rt),
            "duplicates": duplicates(ct),
            "duplicates_vs_reference": duplicates_vs_ref(ct, rt),
        })
    means = {
        "rouge1_f1": sum(e["r1"]["f1"] for e in expected) / len(expected),
        "rouge2_f1": sum(e["r2"]["f1"] for e in expected) / len(expected),
        "rougeL_f1": sum(e["rl"]["f1"] for e in expected) / len(expected),
        "avg_duplicate_unigrams": sum(e["duplicates"] for e in expected) / len(expected),
    }
    with open("rouge_fixture_expected.json", "w") as f:
        json.dump({"per_example": expected, "means": means}, f, indent=1)
    print("wrote", len(expected), "fixture rows")


if __name__ == "__main__":
    main()
