"""Independent reference implementations used to cross-check the library.

Each one follows the textbook definition in the most direct way possible and
shares no code with the package.
"""

from __future__ import annotations

import math


def argmin_scan(query, codebook) -> int:
    """Brute-force nearest row by squared Euclidean distance; first index wins ties."""
    best, best_d = -1, math.inf
    for k, row in enumerate(codebook):
        d = 0.0
        for a, b in zip(query, row):
            d += (float(a) - float(b)) ** 2
        if d < best_d:
            best, best_d = k, d
    return best


def pack_bits_str(indices, K: int) -> bytes:
    """MSB-first fixed-width packing via binary strings."""
    width = max(1, (K - 1).bit_length())
    bits = "".join(format(int(i), f"0{width}b") for i in indices)
    bits += "0" * (-len(bits) % 8)
    return bytes(int(bits[i:i + 8], 2) for i in range(0, len(bits), 8))


def crc32_bitwise(data: bytes) -> int:
    """Reflected CRC-32 with polynomial 0xEDB88320, one bit at a time."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def fnv1a_64_ref(data: bytes) -> int:
    h = 14695981039346656037
    for byte in data:
        h ^= byte
        h = (h * 1099511628211) % 2**64
    return h


def matvec(M, v):
    return [sum(M[i][j] * v[i] for i in range(len(v))) for j in range(len(M[0]))]


def mlp_row(x, w1, b1, w2, b2):
    """relu(x W1 + b1) W2 + b2 for one row, with plain Python loops."""
    h = [max(0.0, a + b) for a, b in zip(matvec(w1, x), b1)]
    return [a + b for a, b in zip(matvec(w2, h), b2)]
