"""Extended-precision Frechet distance for the committed 5-D feature sets.

Writes fid_sets.txt (the two sets) and fid_expected.txt (the distance).
"""
import random

import mpmath

mpmath.mp.dps = 60
DIM = 5


def draw(rng, n, shift, scale):
    return [[round(rng.gauss(shift[j], scale[j]), 6) for j in range(DIM)] for _ in range(n)]


def stats(rows):
    n = len(rows)
    rows = [[mpmath.mpf(repr(v)) for v in r] for r in rows]
    mu = [sum(r[j] for r in rows) / n for j in range(DIM)]
    cov = mpmath.matrix(DIM, DIM)
    for i in range(DIM):
        for j in range(DIM):
            cov[i, j] = sum((r[i] - mu[i]) * (r[j] - mu[j]) for r in rows) / (n - 1)
    return mu, cov


def fid(a, b):
    mua, ca = stats(a)
    mub, cb = stats(b)
    mean_term = sum((x - y) ** 2 for x, y in zip(mua, mub))
    root = mpmath.sqrtm(ca * cb)
    tr = sum(ca[i, i] + cb[i, i] - 2 * root[i, i] for i in range(DIM))
    return mean_term + mpmath.re(tr)


def main():
    rng = random.Random(20240607)
    a = draw(rng, 40, [0.0, 0.5, -1.0, 2.0, 0.0], [1.0, 0.5, 2.0, 1.0, 0.3])
    b = draw(rng, 33, [0.3, 0.0, -0.5, 2.5, 0.1], [0.8, 1.2, 1.0, 1.5, 0.5])
    with open("fid_sets.txt", "w") as f:
        for name, rows in (("a", a), ("b", b)):
            for r in rows:
                f.write(name + " " + " ".join(repr(v) for v in r) + "\n")
    with open("fid_expected.txt", "w") as f:
        f.write(mpmath.nstr(fid(a, b), 30) + "\n")


if __name__ == "__main__":
    main()
