import numpy as np


def fourier_embed(s, m: int) -> np.ndarray:
    """(s, sin(pi s), cos(pi s), sin(2 pi s), cos(2 pi s), ...) up to frequency 2^(m-1) pi.

    A scalar gives a vector of 2m+1 values; an array gains a trailing axis.
    """
    s = np.asarray(s, dtype=np.float64)
    flat = s.reshape(-1, 1)
    out = np.empty((flat.shape[0], 2 * m + 1))
    out[:, 0] = flat[:, 0]
    if m:
        ang = np.pi * flat * (2.0 ** np.arange(m))[None, :]
        out[:, 1::2] = np.sin(ang)
        out[:, 2::2] = np.cos(ang)
    return out[0] if s.ndim == 0 else out.reshape(s.shape + (2 * m + 1,))


def fourier_embed_grad(s, m: int) -> np.ndarray:
    """d embed / d s for a 1-D batch, same layout as :func:`fourier_embed`."""
    s = np.asarray(s, dtype=np.float64).reshape(-1, 1)
    out = np.empty((s.shape[0], 2 * m + 1))
    out[:, 0] = 1.0
    if m:
        freq = np.pi * (2.0 ** np.arange(m))[None, :]
        ang = freq * s
        out[:, 1::2] = freq * np.cos(ang)
        out[:, 2::2] = -freq * np.sin(ang)
    return out
