"""Dense matrix utilities shared by every other module.

Matrices are plain 2-D float64 numpy arrays throughout.  This module adds
the pieces numpy does not ship in the exact form we need: the trace-based
cosine correlation used to score learned generators, a guarded
least-squares solver for the regression oracle, a central-difference
gradient checker, a seeded RNG with a fixed bit-exact output convention,
and a tiny binary matrix file format ("LCONVMAT") for artifacts.
"""

import struct

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class LconvError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(LconvError):
    pass


class DegenerateInputError(LconvError):
    pass


class SingularSystemError(LconvError):
    def __init__(self, message, cond):
        super().__init__(message)
        self.cond = cond


class FormatError(LconvError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class EvaluationError(LconvError):
    pass


def as_matrix(a):
    """Coerce to a 2-D float64 array without copying when possible."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got ndim={m.ndim}")
    return m


def check_finite(m, what="matrix"):
    if not np.all(np.isfinite(m)):
        raise DegenerateInputError(f"{what} contains NaN or Inf entries")
    return m


def frobenius(a):
    return float(np.linalg.norm(a))


def cosine_correlation(a, b):
    """Corr(a, b) = Tr(a^T b) / (||a|| ||b||), the Frobenius-angle cosine.

    Symmetric and scale invariant up to sign; lies in [-1, 1] up to
    rounding.  Raises on shape mismatch or zero-norm input.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    na = frobenius(a)
    nb = frobenius(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine correlation of a zero-norm matrix")
    return float(np.sum(a * b) / (na * nb))


# Conditioning thresholds for the normal-equation solver.  Above FALLBACK
# we switch to an orthogonal (SVD) solve; above REJECT the system is
# reported as singular.
_COND_FALLBACK = 1.0e8
_COND_REJECT = 1.0e12


def least_squares_solve(x, y):
    """Solve Y = R X for R in the least-squares sense; X, Y are d x N.

    Returns R = (Y X^T)(X X^T)^{-1} minimizing ||Y - RX||_F.  Normal
    equations with a Cholesky solve are used while X X^T is well
    conditioned; an SVD-based orthogonal solve takes over between 1e8 and
    1e12, beyond which the system is rejected as rank deficient.
    """
    x = as_matrix(x)
    y = as_matrix(y)
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"sample counts differ: X has {x.shape[1]}, Y has {y.shape[1]}")
    d, n = x.shape
    if n < d:
        raise DegenerateInputError(f"need at least d={d} samples, got {n}")
    gram = x @ x.T
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > _COND_REJECT:
        raise SingularSystemError(
            f"X X^T is numerically rank deficient (cond ~ {cond:.3e})", cond)
    if cond <= _COND_FALLBACK:
        c, low = cho_factor(gram)
        # R (X X^T) = Y X^T  <=>  (X X^T) R^T = X Y^T
        return cho_solve((c, low), x @ y.T).T
    r_t, *_ = np.linalg.lstsq(x.T, y.T, rcond=None)
    return r_t.T


def finite_difference_gradient(loss, p, step):
    """Central-difference gradient of a scalar function at p."""
    if step <= 0:
        raise DegenerateInputError("step must be positive")
    p = np.asarray(p, dtype=np.float64).ravel()
    grad = np.empty_like(p)
    for k in range(p.size):
        e = np.zeros_like(p)
        e[k] = step
        hi = loss(p + e)
        lo = loss(p - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise EvaluationError(f"loss not finite at coordinate {k}")
        grad[k] = (hi - lo) / (2.0 * step)
    return grad


class SeededRng:
    """Deterministic random stream: PCG64 with a fixed 64-bit seed.

    The same seed reproduces the same stream bit-for-bit across runs and
    platforms (PCG64 uses integer state arithmetic; doubles come from the
    fixed 53-bit conversion in numpy's Generator.random).
    """

    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, rows, cols, low=-0.5, high=0.5):
        """Uniform matrix in [low, high) derived from uniform [0, 1) doubles."""
        u = self._gen.random((rows, cols))
        return low + (high - low) * u

    def uniform_signed(self, scale, shape):
        """Uniform in [-scale, scale) with the same conversion convention."""
        u = self._gen.random(shape)
        return scale * (2.0 * u - 1.0)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n, size, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n):
        return self._gen.permutation(n)


# --- binary matrix file format -----------------------------------------
#
# header: 8 magic bytes "LCONVMAT", u32 version (little-endian), u64 rows,
# u64 cols; payload: rows*cols little-endian IEEE-754 doubles, row-major.

MAGIC = b"LCONVMAT"
VERSION = 1
_HEADER = struct.Struct("<8sIQQ")


def write_matrix(path, m):
    m = as_matrix(m)
    check_finite(m, "matrix to write")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError("truncated header", len(head))
        magic, version, rows, cols = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}", 0)
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 8)
        payload = fh.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise FormatError(
            f"payload has {len(payload)} bytes, expected {expected}",
            _HEADER.size + len(payload))
    m = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)
    return check_finite(m, f"matrix read from {path}")


def write_csv(path, header, rows):
    """RFC-4180 CSV: CRLF line endings, '.' decimal separator."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\r\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\r\n")


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    s = str(v)
    if any(ch in s for ch in ',"\r\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s
