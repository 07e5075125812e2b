"""Element-type tags used by buffers, transfers, and tensor dumps.

``float16-wide`` is a 16-bit float with a float32-sized exponent (stored
via ml_dtypes.bfloat16), so reduced-precision normalization keeps the
full dynamic range of the float32 path.
"""

import ml_dtypes
import numpy as np

UINT8 = "uint8"
FLOAT32 = "float32"
FLOAT16_WIDE = "float16-wide"
INT32 = "int32"

_NUMPY_OF = {
    UINT8: np.dtype(np.uint8),
    FLOAT32: np.dtype(np.float32),
    FLOAT16_WIDE: np.dtype(ml_dtypes.bfloat16),
    INT32: np.dtype(np.int32),
}
_TAG_OF = {v: k for k, v in _NUMPY_OF.items()}

ITEMSIZE = {tag: dt.itemsize for tag, dt in _NUMPY_OF.items()}


def to_numpy(tag: str) -> np.dtype:
    try:
        return _NUMPY_OF[tag]
    except KeyError:
        raise KeyError(f"unknown dtype tag {tag!r}") from None


def tag_of(arr: np.ndarray) -> str:
    try:
        return _TAG_OF[arr.dtype]
    except KeyError:
        raise KeyError(f"no dtype tag for numpy dtype {arr.dtype!r}") from None


def round_to_wide_half(x: np.ndarray) -> np.ndarray:
    """Round a float32 array to the nearest float16-wide value."""
    return x.astype(_NUMPY_OF[FLOAT16_WIDE])
