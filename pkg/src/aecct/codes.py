"""Linear block codes over GF(2): parity-check ingestion, generator, syndrome, encoding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class CodeFormatError(ValueError):
    """Raised when parity-check text cannot be parsed or is inconsistent."""


class RankDeficientError(ValueError):
    """Raised when H does not have full row rank over GF(2)."""


class CodeMismatchError(ValueError):
    """An artifact was built for a different parity-check matrix."""


def gf2_row_reduce(mat):
    """Reduced row echelon form over GF(2).

    Returns:
        (rref, pivots): the reduced matrix (uint8 copy) and the pivot column
        of each nonzero row, in row order.
    """
    a = np.array(mat, dtype=np.uint8) & 1
    rows, cols = a.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        hits = np.nonzero(a[r:, c])[0]
        if hits.size == 0:
            continue
        p = r + hits[0]
        if p != r:
            a[[r, p]] = a[[p, r]]
        others = np.nonzero(a[:, c])[0]
        others = others[others != r]
        a[others] ^= a[r]
        pivots.append(c)
        r += 1
    return a, pivots


def gf2_rank(mat) -> int:
    return len(gf2_row_reduce(mat)[1])


@dataclass(frozen=True)
class ParityCheck:
    """Binary parity-check matrix H of an (n, k) code."""

    h: np.ndarray
    name: str = "code"
    n: int = field(init=False)
    k: int = field(init=False)

    def __post_init__(self):
        h = np.asarray(self.h)
        if h.ndim != 2:
            raise CodeFormatError(f"H must be 2-D, got shape {h.shape}")
        if not np.all((h == 0) | (h == 1)):
            raise CodeFormatError("H entries must be 0 or 1")
        h = h.astype(np.uint8)
        m, n = h.shape
        if not 0 < m < n:
            raise CodeFormatError(f"H shape {h.shape} does not give 0 < k < n")
        rank = gf2_rank(h)
        if rank != m:
            raise RankDeficientError(f"H has GF(2) rank {rank} < {m} rows")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", n - m)

    @property
    def m(self) -> int:
        return self.n - self.k

    @property
    def rate(self) -> float:
        return self.k / self.n

    def fingerprint(self) -> str:
        """SHA-256 of the matrix shape and contents; ties checkpoints to a code."""
        digest = hashlib.sha256()
        digest.update(f"{self.m}x{self.n}:".encode())
        digest.update(np.packbits(self.h, axis=None).tobytes())
        return digest.hexdigest()

    def __eq__(self, other):
        return isinstance(other, ParityCheck) and np.array_equal(self.h, other.h)

    def __hash__(self):
        return hash(self.fingerprint())


@dataclass(frozen=True)
class Generator:
    g: np.ndarray
    # column order used for the systematic form; g[:, perm] == [I | A^T]
    perm: np.ndarray

    @property
    def k(self) -> int:
        return self.g.shape[0]

    @property
    def n(self) -> int:
        return self.g.shape[1]


def _ints(line: str, lineno: int) -> list[int]:
    try:
        return [int(tok) for tok in line.split()]
    except ValueError as exc:
        raise CodeFormatError(f"line {lineno}: non-integer token") from exc


def parse_alist(text: str, name: str = "code") -> ParityCheck:
    """Parse the sparse alist format.

    Layout: ``n m``, ``max_col_deg max_row_deg``, n column degrees, m row
    degrees, then n lines of 1-based row indices per column and m lines of
    1-based column indices per row. Zero padding in index lists is ignored.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 4:
        raise CodeFormatError("alist text too short")
    head = _ints(lines[0], 1)
    if len(head) != 2:
        raise CodeFormatError("first line must be 'n m'")
    n, m = head
    if n <= 0 or m <= 0:
        raise CodeFormatError("dimensions must be positive")
    _ints(lines[1], 2)
    col_deg = _ints(lines[2], 3)
    row_deg = _ints(lines[3], 4)
    if len(col_deg) != n or len(row_deg) != m:
        raise CodeFormatError("degree lists do not match declared n, m")
    if len(lines) < 4 + n + m:
        raise CodeFormatError(f"expected {n} column and {m} row index lines")

    h = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        idx = [i for i in _ints(lines[4 + j], 5 + j) if i != 0]
        if len(idx) != col_deg[j]:
            raise CodeFormatError(f"column {j + 1}: degree {col_deg[j]} but {len(idx)} indices")
        if any(not 1 <= i <= m for i in idx):
            raise CodeFormatError(f"column {j + 1}: row index out of range")
        h[np.asarray(idx) - 1, j] = 1
    h_rows = np.zeros_like(h)
    for i in range(m):
        idx = [j for j in _ints(lines[4 + n + i], 5 + n + i) if j != 0]
        if len(idx) != row_deg[i]:
            raise CodeFormatError(f"row {i + 1}: degree {row_deg[i]} but {len(idx)} indices")
        if any(not 1 <= j <= n for j in idx):
            raise CodeFormatError(f"row {i + 1}: column index out of range")
        h_rows[i, np.asarray(idx) - 1] = 1
    if not np.array_equal(h, h_rows):
        raise CodeFormatError("row and column index lists disagree")
    return ParityCheck(h, name=name)


def parse_dense(text: str, name: str = "code") -> ParityCheck:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise CodeFormatError("dense grid rows must be nonempty and equal length")
    try:
        h = np.array([[int(v) for v in r] for r in rows])
    except ValueError as exc:
        raise CodeFormatError("dense grid must contain only integers") from exc
    return ParityCheck(h, name=name)


def to_alist(pc: ParityCheck) -> str:
    h = pc.h
    col_idx = [np.nonzero(h[:, j])[0] + 1 for j in range(pc.n)]
    row_idx = [np.nonzero(h[i])[0] + 1 for i in range(pc.m)]
    out = [
        f"{pc.n} {pc.m}",
        f"{max(map(len, col_idx))} {max(map(len, row_idx))}",
        " ".join(str(len(c)) for c in col_idx),
        " ".join(str(len(r)) for r in row_idx),
    ]
    out += [" ".join(map(str, c)) for c in col_idx]
    out += [" ".join(map(str, r)) for r in row_idx]
    return "\n".join(out) + "\n"


def load_parity_check(source, name: str | None = None) -> ParityCheck:
    """Load H from alist text, a dense 0/1 grid, or a path to either.

    Args:
        source: file path or the text itself.
        name: label; defaults to the file stem.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).is_file()):
        path = Path(source)
        text = path.read_text()
        name = name or path.stem
    else:
        text = str(source)
        name = name or "code"
    first = text.split("\n", 1)[0].split()
    # a dense grid's first row is all 0/1 and longer than two tokens
    if len(first) > 2 and set(first) <= {"0", "1"}:
        return parse_dense(text, name)
    return parse_alist(text, name)


def derive_generator(pc: ParityCheck) -> Generator:
    """Systematic generator via elimination of H to [A | I] up to column permutation."""
    rref, pivots = gf2_row_reduce(pc.h)
    pivots = np.asarray(pivots)
    free = np.setdiff1d(np.arange(pc.n), pivots)
    perm = np.concatenate([free, pivots])
    a = rref[:, free]  # m x k, since rref[:, pivots] is the identity
    g_sys = np.concatenate([np.eye(pc.k, dtype=np.uint8), a.T], axis=1)
    g = np.zeros_like(g_sys)
    g[:, perm] = g_sys
    g.setflags(write=False)
    perm.setflags(write=False)
    return Generator(g=g, perm=perm)


def _binary_vector(bits, length: int, what: str) -> np.ndarray:
    v = np.asarray(bits)
    if v.shape[-1] != length:
        raise ValueError(f"{what} must have length {length}, got {v.shape[-1]}")
    if not np.all((v == 0) | (v == 1)):
        raise ValueError(f"{what} must be binary")
    return v.astype(np.uint8)


def syndrome(pc: ParityCheck, bits) -> np.ndarray:
    """H·bits mod 2. Accepts a single word or a batch of shape (..., n)."""
    v = _binary_vector(bits, pc.n, "bits")
    return (v.astype(np.int64) @ pc.h.T.astype(np.int64) % 2).astype(np.uint8)


def encode(gen: Generator, message) -> np.ndarray:
    """m·G mod 2. Accepts a single message or a batch of shape (..., k)."""
    v = _binary_vector(message, gen.k, "message")
    return (v.astype(np.int64) @ gen.g.astype(np.int64) % 2).astype(np.uint8)


BUNDLED = {
    "hamming_7_4": "Hamming(7,4)",
    "bch_31_16": "BCH(31,16)",
    "bch_63_36": "BCH(63,36)",
    "bch_63_45": "BCH(63,45)",
    "bch_63_51": "BCH(63,51)",
    "polar_64_48": "POLAR(64,48)",
    "polar_128_86": "POLAR(128,86)",
    "polar_128_96": "POLAR(128,96)",
    "ldpc_49_24": "LDPC(49,24)",
    "ldpc_121_60": "LDPC(121,60)",
    "ldpc_121_70": "LDPC(121,70)",
    "ldpc_121_80": "LDPC(121,80)",
}

# benchmark codes (every bundled code except the Hamming toy)
TABLE_CODES = [key for key in BUNDLED if key != "hamming_7_4"]


def bundled_code_path(key: str) -> Path:
    if key not in BUNDLED:
        raise KeyError(f"unknown bundled code {key!r}; choose from {sorted(BUNDLED)}")
    return Path(str(resources.files("aecct") / "data" / f"{key}.alist"))


def bundled_code(key: str) -> ParityCheck:
    return load_parity_check(bundled_code_path(key), name=BUNDLED[key])


def resolve_code(spec: str) -> ParityCheck:
    """A bundled key (``bch_31_16``), its file name, or a filesystem path."""
    stem = Path(spec).name.removesuffix(".alist")
    if not Path(spec).is_file() and stem in BUNDLED:
        return bundled_code(stem)
    if not Path(spec).is_file():
        raise FileNotFoundError(spec)
    return load_parity_check(spec)
