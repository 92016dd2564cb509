#!/usr/bin/env python3
"""Reference keyed shuffle used to produce tests/data/golden_permutations.txt.

Independent of the Rust implementation: hashlib SHA-256 in counter mode,
Fisher-Yates with rejection sampling, output one-based.

    python3 keyed_shuffle.py > ../data/golden_permutations.txt
"""
import hashlib
import struct

DOMAIN = b"featlock/perm/v1"
U64_MAX = 2**64 - 1


def words(key: bytes, site: int, c: int):
    counter = 0
    while True:
        block = hashlib.sha256(
            DOMAIN
            + struct.pack("<I", site)
            + struct.pack("<Q", c)
            + struct.pack("<Q", counter)
            + key
        ).digest()
        for i in range(4):
            yield struct.unpack("<Q", block[8 * i : 8 * i + 8])[0]
        counter += 1


def shuffle(key: bytes, c: int, site: int = 0):
    stream = words(key, site, c)
    alpha = list(range(1, c + 1))
    for i in range(c - 1, 0, -1):
        n = i + 1
        limit = U64_MAX - U64_MAX % n
        while True:
            r = next(stream)
            if r < limit:
                break
        j = r % n
        alpha[i], alpha[j] = alpha[j], alpha[i]
    return alpha


CASES = [
    # (key, site, c)
    (bytes(range(16)), 0, 8),
    (bytes(range(16)), 0, 1),
    (bytes(range(16)), 0, 2),
    (bytes(range(16)), 0, 3),
    (bytes(range(16)), 0, 16),
    (bytes(range(16)), 0, 64),
    (b"featlock-golden-key", 0, 12),
    (bytes(range(16)), 1, 16),
    (bytes(range(16)), 2, 32),
    (bytes(range(16)), 0, 48),
]

if __name__ == "__main__":
    print("# key, site per line in order; see CASES in tests/oracles/keyed_shuffle.py")
    for key, site, c in CASES:
        alpha = shuffle(key, c, site)
        print(" ".join(str(v) for v in [c] + alpha))
