# cython: language_level=3
"""Compiled sequential-squaring kernel.

Moduli that fit 64 bits run in native unsigned arithmetic with a 128-bit
intermediate and the GIL released; wider moduli use CPython big ints inside
the same loop structure. Either way the loop body executes exactly once per
step: there is no exponent shortcut on this path.
"""

cdef extern from *:
    ctypedef unsigned long long uint128 "unsigned __int128"

BACKEND = "compiled"

_U64_MAX = 18446744073709551615


def square_chain(value, modulus, steps):
    cdef unsigned long long vm, mm
    cdef uint128 wide
    cdef long long i, nsteps
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if modulus <= 1:
        raise ValueError("modulus must be greater than 1")
    nsteps = steps
    v = value % modulus
    if modulus <= _U64_MAX:
        vm = v
        mm = modulus
        with nogil:
            for i in range(nsteps):
                wide = vm
                vm = <unsigned long long> ((wide * vm) % mm)
        return int(vm)
    for i in range(nsteps):
        v = v * v % modulus
    return v
