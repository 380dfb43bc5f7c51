"""Item-based collaborative filtering over a co-occurrence matrix.

The co-occurrence matrix counts, for every item pair, how many users visited
both; its diagonal counts visits per item. Raw counts serve directly as the
similarity weights (no cosine or Jaccard normalization). A user's predicted
score for item i is the dot product of row i with the user's rating vector,
summed over all items.

The encrypted variant computes exactly that over pair-encoded multiplicative
ciphertexts: each weight-times-rating term is a pair product switched into
the additive domain, then accumulated homomorphically. Decrypting the result
must match predict_plain - predict_plain is the oracle for the whole
encrypted path.
"""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import CiphertextError, DomainError, ProtocolError, RecommendationAborted
from .she import AddCiphertext, MulPublicKey, enc_add, add_homomorphic, sub_homomorphic
from .switching import PairEncodedValue, pair_product_to_add

log = logging.getLogger(__name__)

DEFAULT_R_MAX = 15
DEFAULT_RADIUS = 1


@dataclass
class CoMatrix:
    """Symmetric item-item co-occurrence counts."""

    size: int
    rows: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.rows:
            self.rows = [[0] * self.size for _ in range(self.size)]
        if len(self.rows) != self.size or any(len(r) != self.size for r in self.rows):
            raise DomainError("co-occurrence matrix shape does not match its size")

    def max_entry(self) -> int:
        return max((v for row in self.rows for v in row), default=0)

    def is_symmetric(self) -> bool:
        return all(
            self.rows[i][j] == self.rows[j][i]
            for i in range(self.size)
            for j in range(i + 1, self.size)
        )


@dataclass
class PreferenceVector:
    """One user's ratings over all items; 0 means not visited."""

    values: list[int]
    r_max: int = DEFAULT_R_MAX

    def __post_init__(self):
        if any(not 0 <= v <= self.r_max for v in self.values):
            raise DomainError(f"ratings must lie in [0, {self.r_max}]")

    @property
    def size(self) -> int:
        return len(self.values)


def build_cm(lists: Mapping[object, Iterable[int]], size: int) -> CoMatrix:
    """Accumulate co-occurrence counts from per-user inversion lists.

    For each user, every item in the (deduplicated) list bumps its diagonal
    entry, and every ordered pair of distinct items bumps its off-diagonal
    entry. Item indices must lie in [0, size).
    """
    cm = CoMatrix(size)
    for user, items in lists.items():
        dedup = sorted(set(items))
        for i in dedup:
            if not 0 <= i < size:
                raise DomainError(f"item {i} of user {user!r} outside [0, {size})")
        for i in dedup:
            cm.rows[i][i] += 1
            for j in dedup:
                if i != j:
                    cm.rows[i][j] += 1
    return cm


def predict_plain(cm: CoMatrix, pv: PreferenceVector) -> list[int]:
    """Reference scores: RL[i] = sum_j CM[i][j] * PV[j]."""
    if pv.size != cm.size:
        raise DomainError("preference vector length does not match the matrix")
    return [sum(w * r for w, r in zip(row, pv.values)) for row in cm.rows]


def check_score_bound(size: int, r_max: int, cm_max: int, n: int) -> None:
    """Reject configurations whose scores could wrap mod N."""
    if size * r_max * cm_max >= n:
        raise DomainError(
            f"score bound {size}*{r_max}*{cm_max} reaches the modulus; "
            "decrypted scores would wrap"
        )


def recommend_encrypted(
    cm_pairs: list[list[PairEncodedValue]],
    pv_pairs: list[PairEncodedValue],
    switch,
    pk_add: int,
    pk_mul: MulPublicKey,
    rng: random.Random | None = None,
) -> list[AddCiphertext]:
    """Score every item over ciphertexts; decrypts to predict_plain mod N.

    Any switching failure aborts the whole computation - no partial list is
    ever released.
    """
    size = len(cm_pairs)
    if len(pv_pairs) != size or any(len(row) != size for row in cm_pairs):
        raise DomainError("encrypted matrix and vector sizes disagree")
    try:
        scores = []
        for i in range(size):
            acc = enc_add(pk_add, 0, rng)
            for j in range(size):
                term = pair_product_to_add(cm_pairs[i][j], pv_pairs[j], switch, pk_add, pk_mul, rng)
                acc = add_homomorphic(acc, term)
            scores.append(acc)
        return scores
    except (CiphertextError, ProtocolError) as exc:
        raise RecommendationAborted(f"switching failed mid-computation: {exc}") from exc


def filter_by_location(
    rl_enc: list[AddCiphertext],
    loc_enc: AddCiphertext,
    radius: int,
    pk_add: int,
) -> list[tuple[int, AddCiphertext, AddCiphertext]]:
    """Attach an encrypted index offset E+((i - loc) mod N) to every score.

    The index encryptions use pinned randomness r=1 - item positions are
    public, only the subtracted location is hidden. The radius cut happens
    client side after decryption; a radius covering the whole index range is
    degenerate and only logged.
    """
    if radius < 0:
        raise DomainError("radius must be >= 0")
    if radius >= len(rl_enc):
        log.warning("radius %d covers all %d items; filter is a no-op", radius, len(rl_enc))
    out = []
    for i, score in enumerate(rl_enc):
        offset = sub_homomorphic(enc_add(pk_add, i, r=1), loc_enc)
        out.append((i, score, offset))
    return out


def signed_residue(v: int, n: int) -> int:
    """Map a residue mod n to the representative in (-n/2, n/2]."""
    v %= n
    return v - n if v > n // 2 else v


def filter_scores(
    scores: list[int],
    offsets: list[int],
    radius: int,
    n: int,
) -> list[tuple[int, int]]:
    """Client-side companion of filter_by_location: keep |i - loc| <= radius."""
    return [
        (i, score)
        for i, (score, off) in enumerate(zip(scores, offsets))
        if abs(signed_residue(off, n)) <= radius
    ]


def cm_delta(old: CoMatrix, new: CoMatrix, n: int) -> list[list[int]]:
    """Entrywise difference mod n, suitable for homomorphic absorption."""
    if old.size != new.size:
        raise DomainError("matrices differ in size")
    return [
        [(nv - ov) % n for ov, nv in zip(orow, nrow)]
        for orow, nrow in zip(old.rows, new.rows)
    ]


# --- plain-domain CSV fixtures -------------------------------------------
#
# First row is the header ("size", n); data rows are plain integers,
# row-major for matrices, one row for vectors.


def save_cm_csv(path: str, cm: CoMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", cm.size])
        w.writerows(cm.rows)


def load_cm_csv(path: str) -> CoMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    size = _parse_header(rows)
    return CoMatrix(size, [[int(v) for v in row] for row in rows[1:]])


def save_pv_csv(path: str, pv: PreferenceVector) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", pv.size])
        w.writerow(pv.values)


def load_pv_csv(path: str, r_max: int = DEFAULT_R_MAX) -> PreferenceVector:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    size = _parse_header(rows)
    values = [int(v) for v in rows[1]]
    if len(values) != size:
        raise DomainError("vector length does not match its header")
    return PreferenceVector(values, r_max=max(r_max, max(values, default=0)))


def _parse_header(rows: list[list[str]]) -> int:
    if not rows or len(rows[0]) != 2 or rows[0][0] != "size":
        raise DomainError("missing 'size' header row")
    return int(rows[0][1])
