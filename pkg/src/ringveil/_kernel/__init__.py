"""Sequential-squaring kernel; the compiled backend is picked at import when built."""

try:
    from ringveil._kernel._seqsquare import BACKEND, square_chain
except ImportError:  # extension not compiled for this interpreter
    from ringveil._kernel.pure import BACKEND, square_chain

__all__ = ["BACKEND", "square_chain"]
