"""Reference implementations used as test oracles.  Everything here is plain
Python over lists of bytes, sharing no code with the package kernels."""
import bisect

EXAMPLE_MAIN = ["hotel", "delta", "frank", "delta", "apple", "inbox", "bravo"]
EXAMPLE_DELTA = ["young", "charlie", "apple", "charlie", "golf"]


def pad(s, width=8):
    return s.encode().ljust(width, b"\0")


def example_main(width=8):
    return [pad(s, width) for s in EXAMPLE_MAIN]


def example_delta(width=8):
    return [pad(s, width) for s in EXAMPLE_DELTA]


def ref_width(n):
    # smallest b with 2**b >= n, at least one bit
    b = 1
    while (1 << b) < n:
        b += 1
    return b


def ref_encode(values):
    """(sorted distinct values, code per value)."""
    uniq = sorted(set(values))
    pos = {v: i for i, v in enumerate(uniq)}
    return uniq, [pos[v] for v in values]


def ref_merge_column(main_values, delta_values):
    """Merged dictionary and codes of main ++ delta, from scratch."""
    return ref_encode(list(main_values) + list(delta_values))


def ref_translation(u_old, merged):
    return [bisect.bisect_left(merged, v) for v in u_old]


def ref_pack(codes, width):
    """Little-endian bit stream cut into 64-bit words."""
    acc = 0
    for i, c in enumerate(codes):
        acc |= c << (i * width)
    n = (len(codes) * width + 63) // 64
    return [(acc >> (64 * k)) & ((1 << 64) - 1) for k in range(n)]


def ref_postings(values):
    out = {}
    for i, v in enumerate(values):
        out.setdefault(v, []).append(i)
    return sorted(out.items())


# acceptance outcomes, printed one line each at the end of the session
ACCEPTANCE = {}


def record(n, ok, detail):
    ACCEPTANCE[n] = ("PASS" if ok is True else "FAIL" if ok is False else ok, detail)
    return ok
