import numpy as np


class NumericalError(np.linalg.LinAlgError):
    """Cholesky factorisation failed even at the largest permitted jitter."""


def jittered_cholesky(A, scale, start=1e-9, stop=1e-3):
    """Lower Cholesky factor of ``A + j * scale * I``.

    ``j`` starts at ``start`` and grows tenfold on failure up to ``stop``.
    Returns ``(L, jitter)`` where ``jitter`` is the absolute amount added.
    """
    A = np.asarray(A, dtype=float)
    eye = np.eye(A.shape[0])
    rel = start
    while rel <= stop * (1 + 1e-12):
        jitter = rel * scale
        try:
            return np.linalg.cholesky(A + jitter * eye), jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    try:
        cond = np.linalg.cond(A)
    except np.linalg.LinAlgError:
        cond = np.inf
    raise NumericalError(
        f"Cholesky failed up to jitter {stop:g}*scale (n={A.shape[0]}, condition estimate {cond:.3g})"
    )
