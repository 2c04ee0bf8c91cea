"""Regenerate the alist files shipped in src/aecct/data.

BCH codes: cyclic H built from the parity polynomial (x^n - 1) / g(x).
Polar codes: H = columns of F^{(x)m} at frozen indices, frozen set from the
Bhattacharyya recursion at a fixed design Eb/N0.
LDPC codes: column-weight-3 random construction avoiding 4-cycles, retried
until H has full row rank.

Usage: python tools/make_bundled_codes.py
"""

from pathlib import Path

import numpy as np

from aecct.codes import ParityCheck, gf2_rank, to_alist

OUT = Path(__file__).resolve().parents[1] / "src" / "aecct" / "data"

PRIMITIVE = {5: 0b100101, 6: 0b1000011}


def _gf_tables(m):
    size = 1 << m
    exp = np.zeros(2 * size, dtype=np.int64)
    log = np.zeros(size, dtype=np.int64)
    x = 1
    for i in range(size - 1):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & size:
            x ^= PRIMITIVE[m]
    exp[size - 1:2 * (size - 1)] = exp[:size - 1]
    return exp, log


def _poly_mul_gf(a, b, exp, log):
    out = [0] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            if ai and bj:
                out[i + j] ^= int(exp[log[ai] + log[bj]])
    return out


def _minimal_poly(power, m, exp, log):
    n = (1 << m) - 1
    coset = []
    c = power % n
    while c not in coset:
        coset.append(c)
        c = (2 * c) % n
    poly = [1]
    for c in coset:
        poly = _poly_mul_gf(poly, [int(exp[c]), 1], exp, log)
    assert all(v in (0, 1) for v in poly)
    return tuple(poly), tuple(sorted(coset))


def _gf2_poly_mul(a, b):
    out = np.zeros(len(a) + len(b) - 1, dtype=np.int64)
    for i, ai in enumerate(a):
        if ai:
            out[i:i + len(b)] ^= np.asarray(b)
    return out


def _gf2_poly_div(num, den):
    num = list(num)
    q = [0] * (len(num) - len(den) + 1)
    for i in range(len(q) - 1, -1, -1):
        if num[i + len(den) - 1]:
            q[i] = 1
            for j, d in enumerate(den):
                num[i + j] ^= d
    assert not any(num), "not divisible"
    return q


def bch_h(n, k):
    m = int(np.log2(n + 1))
    exp, log = _gf_tables(m)
    g = np.array([1])
    seen = set()
    power = 1
    while len(g) - 1 < n - k:
        poly, coset = _minimal_poly(power, m, exp, log)
        if coset not in seen:
            seen.add(coset)
            g = _gf2_poly_mul(g, poly)
        power += 1
    assert len(g) - 1 == n - k, (n, k, len(g) - 1)
    xn1 = [1] + [0] * (n - 1) + [1]
    h = _gf2_poly_div(xn1, list(g))
    h_rev = h[::-1]
    H = np.zeros((n - k, n), dtype=np.uint8)
    for i in range(n - k):
        H[i, i:i + k + 1] = h_rev
    return H


def polar_h(n, k, design_ebn0_db=2.0):
    levels = int(np.log2(n))
    z = np.array([np.exp(-(k / n) * 10 ** (design_ebn0_db / 10))])
    for _ in range(levels):
        nz = np.empty(2 * len(z))
        nz[0::2] = 2 * z - z ** 2
        nz[1::2] = z ** 2
        z = nz
    frozen = np.sort(np.argsort(-z, kind="stable")[: n - k])
    f = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    g = np.array([[1]], dtype=np.uint8)
    for _ in range(levels):
        g = np.kron(g, f) % 2
    return g[:, frozen].T.copy()


def ldpc_h(n, k, col_weight=3, seed=0):
    m = n - k
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        H = np.zeros((m, n), dtype=np.uint8)
        for j in rng.permutation(n):
            row_deg = H.sum(1)
            chosen = []
            for _ in range(col_weight):
                cand = [i for i in range(m) if i not in chosen]
                # avoid 4-cycles: new row must not share another column with an already chosen row
                good = [i for i in cand
                        if not any(np.any(H[i] & H[c]) for c in chosen)]
                pool = good or cand
                low = min(row_deg[i] for i in pool)
                pool = [i for i in pool if row_deg[i] == low]
                chosen.append(int(rng.choice(pool)))
            H[chosen, j] = 1
        if gf2_rank(H) == m:
            return H
    raise RuntimeError("no full-rank construction found")


HAMMING = np.array([[1, 0, 1, 0, 1, 0, 1],
                    [0, 1, 1, 0, 0, 1, 1],
                    [0, 0, 0, 1, 1, 1, 1]], dtype=np.uint8)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    codes = {
        "hamming_7_4": HAMMING,
        "bch_31_16": bch_h(31, 16),
        "bch_63_36": bch_h(63, 36),
        "bch_63_45": bch_h(63, 45),
        "bch_63_51": bch_h(63, 51),
        "polar_64_48": polar_h(64, 48),
        "polar_128_86": polar_h(128, 86),
        "polar_128_96": polar_h(128, 96),
        "ldpc_49_24": ldpc_h(49, 24, seed=1),
        "ldpc_121_60": ldpc_h(121, 60, seed=2),
        "ldpc_121_70": ldpc_h(121, 70, seed=3),
        "ldpc_121_80": ldpc_h(121, 80, seed=4),
    }
    for key, h in codes.items():
        pc = ParityCheck(h, name=key)
        (OUT / f"{key}.alist").write_text(to_alist(pc))
        print(f"{key}: n={pc.n} k={pc.k} ones={int(h.sum())}")


if __name__ == "__main__":
    main()
