"""Python bindings for the LSNet C++ core."""

from ._lsnet import (
    ArithmeticError,
    ConfigError,
    DataError,
    DivergenceError,
    Error,
    FormatError,
    IncompatibleError,
    LookupError,
    Model,
    ModelSpec,
    NumericError,
    bench_ska,
    blobs10,
    count_macs,
    evaluate,
    gradcheck,
    ls_conv_macs,
    ska_forward,
    ska_forward_naive,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
