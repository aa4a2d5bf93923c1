"""Greedy LZ77 used as a payload compressibility probe.

Token costs are fixed so compression ratios are reproducible: a literal
costs 1 byte; a back-reference costs 3 bytes and packs a 12-bit distance
(1..4096) with a 12-bit length (3..4098). Matches may overlap the cursor.
"""

from __future__ import annotations

WINDOW = 4096
MIN_MATCH = 3
MAX_MATCH = MIN_MATCH + 4095
LITERAL_COST = 1
MATCH_COST = 3
_MAX_CHAIN = 256


def tokenize(data: bytes) -> list[tuple[int, int] | int]:
    """Greedy longest-match parse.

    Returns a list whose items are either a literal byte value (``int``) or a
    ``(distance, length)`` back-reference. Ties on length go to the nearest
    candidate.
    """
    n = len(data)
    out: list = []
    heads: dict[bytes, list[int]] = {}
    i = 0
    while i < n:
        best_len = 0
        best_dist = 0
        if i + MIN_MATCH <= n:
            key = data[i:i + MIN_MATCH]
            chain = heads.get(key)
            if chain:
                lo = i - WINDOW
                limit = min(MAX_MATCH, n - i)
                for pos in reversed(chain[-_MAX_CHAIN:]):
                    if pos < lo:
                        break
                    length = MIN_MATCH
                    while length < limit and data[pos + length] == data[i + length]:
                        length += 1
                    if length > best_len:
                        best_len, best_dist = length, i - pos
                        if length == limit:
                            break
        step = best_len if best_len >= MIN_MATCH else 1
        for j in range(i, min(i + step, n - MIN_MATCH + 1)):
            heads.setdefault(data[j:j + MIN_MATCH], []).append(j)
        if best_len >= MIN_MATCH:
            out.append((best_dist, best_len))
        else:
            out.append(data[i])
        i += step
    return out


def detokenize(tokens) -> bytes:
    buf = bytearray()
    for tok in tokens:
        if isinstance(tok, tuple):
            dist, length = tok
            start = len(buf) - dist
            for k in range(length):
                buf.append(buf[start + k])
        else:
            buf.append(tok)
    return bytes(buf)


def compressed_size(data: bytes) -> int:
    return sum(MATCH_COST if isinstance(t, tuple) else LITERAL_COST for t in tokenize(data))
