#!/usr/bin/env python3
"""Gold-alignment statistics of a synthetic pair written by `kgalign gen-synthetic`.

Prints the mean literal edit distance between aligned attribute values
(matched by key, B keys stripped of the predicate suffix) and the mean
absolute degree difference between aligned entities. The values feed the
pinned regression constants in tests/unit/test_kg.cpp.
"""

import argparse
import collections
import pathlib
import sys


def unescape(s):
    out, i = [], 0
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            nxt = {"t": "\t", "n": "\n", "\\": "\\"}.get(s[i + 1])
            if nxt is not None:
                out.append(nxt)
                i += 2
                continue
            out.append(s[i])
            i += 1
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def load(path):
    attrs = collections.defaultdict(dict)
    degree = collections.Counter()
    for line in pathlib.Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        h, p, o, kind = line.split("\t")
        if kind == "A":
            attrs[h][p] = unescape(o)
        else:
            degree[h] += 1
            degree[o] += 1
    return attrs, degree


def levenshtein(x, y):
    prev = list(range(len(y) + 1))
    for i, cx in enumerate(x, 1):
        cur = [i]
        for j, cy in enumerate(y, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (cx != cy)))
        prev = cur
    return prev[-1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dir", help="directory holding a.tsv, b.tsv, gold.tsv")
    ap.add_argument("--suffix", default="_b")
    args = ap.parse_args()
    d = pathlib.Path(args.dir)
    attrs_a, deg_a = load(d / "a.tsv")
    attrs_b, deg_b = load(d / "b.tsv")
    gold = [l.split("\t") for l in (d / "gold.tsv").read_text().splitlines() if l]

    dists, degs = [], []
    for a, b in gold:
        for key, va in attrs_a[a].items():
            vb = attrs_b[b].get(key + args.suffix)
            if vb is not None:
                dists.append(levenshtein(va, vb))
        degs.append(abs(deg_a[a] - deg_b[b]))
    print(f"pairs {len(gold)}")
    print(f"mean_literal_edit_distance {sum(dists) / len(dists):.6f}")
    print(f"mean_degree_difference {sum(degs) / len(degs):.6f}")


if __name__ == "__main__":
    sys.exit(main())
