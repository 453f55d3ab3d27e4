"""Reference ChaCha8 stream (PCG32 seed expansion, 64-bit counter, 64-bit stream id).

Prints the first u64 outputs and derived draws for the seeds pinned in the
Rust tests, computed without any Rust code.
"""
import math
import sys

M32 = 0xFFFFFFFF
M64 = 0xFFFFFFFFFFFFFFFF


def seed_from_u64(state):
    mul, inc = 6364136223846793005, 11634580027462260723
    words = []
    for _ in range(8):
        state = (state * mul + inc) & M64
        xorshifted = (((state >> 18) ^ state) >> 27) & M32
        rot = state >> 59
        words.append(((xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))) & M32)
    return words


def rotl(x, n):
    return ((x << n) | (x >> (32 - n))) & M32


def quarter(s, a, b, c, d):
    s[a] = (s[a] + s[b]) & M32; s[d] = rotl(s[d] ^ s[a], 16)
    s[c] = (s[c] + s[d]) & M32; s[b] = rotl(s[b] ^ s[c], 12)
    s[a] = (s[a] + s[b]) & M32; s[d] = rotl(s[d] ^ s[a], 8)
    s[c] = (s[c] + s[d]) & M32; s[b] = rotl(s[b] ^ s[c], 7)


def block(key, counter, stream):
    init = [0x61707865, 0x3320646E, 0x79622D32, 0x6B206574] + key + [
        counter & M32, counter >> 32, stream & M32, stream >> 32]
    s = list(init)
    for _ in range(4):
        quarter(s, 0, 4, 8, 12); quarter(s, 1, 5, 9, 13)
        quarter(s, 2, 6, 10, 14); quarter(s, 3, 7, 11, 15)
        quarter(s, 0, 5, 10, 15); quarter(s, 1, 6, 11, 12)
        quarter(s, 2, 7, 8, 13); quarter(s, 3, 4, 9, 14)
    return [(x + y) & M32 for x, y in zip(s, init)]


def u64s(seed, stream=0, n=4):
    key = seed_from_u64(seed)
    words = []
    counter = 0
    while len(words) < 2 * n:
        words += block(key, counter, stream)
        counter += 1
    return [words[2 * i] | (words[2 * i + 1] << 32) for i in range(n)]


def uniform(x):
    return (x >> 11) * (1.0 / (1 << 53))


def main():
    for seed, stream in [(0, 0), (42, 0), (42, 1)]:
        xs = u64s(seed, stream, 4)
        print(f"seed={seed} stream={stream} u64={xs}")
        print(f"  uniform(first)={uniform(xs[0])!r}")
        u1, u2 = 1.0 - uniform(xs[0]), uniform(xs[1])
        r = math.sqrt(-2.0 * math.log(u1))
        print(f"  normal pair=({r * math.cos(2 * math.pi * u2)!r}, {r * math.sin(2 * math.pi * u2)!r})")
        print(f"  below(10) of first={(xs[0] * 10) >> 64}")


if __name__ == "__main__":
    sys.exit(main())
