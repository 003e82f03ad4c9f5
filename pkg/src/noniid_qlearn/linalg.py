"""Dense complex linear algebra for Hermitian operators.

All site indices are 0-based. Operators are plain ``numpy`` arrays; the
helpers here validate and normalize them so the rest of the package can
assume square complex matrices.
"""

from functools import reduce

import numpy as np

HERMITIAN_TOL = 1e-12
PSD_FLOOR = -1e-10
TRACE_TOL = 1e-10
MAX_DENSE_DIM = 4096


class ValidationError(ValueError):
    """Input violates a mathematical precondition."""


class DimensionError(ValueError):
    """Operator and subsystem dimensions are inconsistent."""


class CapacityError(ValueError):
    """Requested object is too large for the dense representation."""


I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PHASE_S = np.array([[1, 0], [0, 1j]], dtype=complex)


def as_generator(seed=None):
    """Return a ``numpy.random.Generator`` from a seed, sequence or generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def as_square(m):
    """Convert ``m`` to a complex square 2-D array."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    return a


def check_hermitian(m, tol=HERMITIAN_TOL):
    """Validate Hermiticity and return the symmetrized matrix.

    The tolerance is absolute for matrices with entries of order one and
    scales with the largest entry otherwise.
    """
    a = as_square(m)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    dev = float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0
    if dev > tol * scale:
        raise ValidationError(f"matrix is not Hermitian (deviation {dev:.3e})")
    return 0.5 * (a + a.conj().T)


def hermitian_eigenvalues(m):
    """Ascending real eigenvalues of a Hermitian matrix."""
    return np.linalg.eigvalsh(check_hermitian(m))


def hermitian_eigh(m):
    """Eigenvalues (ascending) and eigenvectors of a Hermitian matrix."""
    return np.linalg.eigh(check_hermitian(m))


def check_density_matrix(rho, tol=TRACE_TOL):
    """Validate a density matrix and return it symmetrized."""
    a = check_hermitian(rho)
    tr = np.trace(a).real
    if abs(tr - 1.0) > tol:
        raise ValidationError(f"trace is {tr!r}, expected 1")
    lo = np.linalg.eigvalsh(a)[0]
    if lo < PSD_FLOOR:
        raise ValidationError(f"matrix is not positive semidefinite (min eigenvalue {lo:.3e})")
    return a


def is_density_matrix(rho, tol=TRACE_TOL):
    try:
        check_density_matrix(rho, tol)
    except (ValidationError, DimensionError):
        return False
    return True


def check_effect(e, tol=1e-10):
    """Validate ``0 <= e <= I`` and return the symmetrized operator."""
    a = check_hermitian(e)
    ev = np.linalg.eigvalsh(a)
    if ev[0] < -tol or ev[-1] > 1 + tol:
        raise ValidationError("operator is not an effect: eigenvalues must lie in [0, 1]")
    return a


def tensor(*ops):
    """Kronecker product of one or more operators (or vectors)."""
    if len(ops) == 1 and not isinstance(ops[0], np.ndarray) and not np.isscalar(ops[0]):
        ops = tuple(ops[0])
    if not ops:
        return np.ones((1, 1), dtype=complex)
    return reduce(np.kron, [np.asarray(o, dtype=complex) for o in ops])


def tensor_power(op, k):
    """``op`` tensored with itself ``k`` times."""
    return tensor(*([op] * k))


def _check_dims(a, dims):
    dims = [int(x) for x in dims]
    if any(x < 1 for x in dims):
        raise DimensionError("subsystem dimensions must be positive")
    if int(np.prod(dims)) != a.shape[0]:
        raise DimensionError(f"dims {dims} do not multiply to {a.shape[0]}")
    return dims


def partial_trace(m, dims, keep):
    """Trace out every site not listed in ``keep``.

    Parameters
    ----------
    m : array_like
        Square operator on the composite space.
    dims : sequence of int
        Local dimension of each site.
    keep : iterable of int
        0-based sites to keep, returned in ascending order.
    """
    a = as_square(m)
    dims = _check_dims(a, dims)
    n = len(dims)
    keep = sorted(set(int(i) for i in keep))
    if any(i < 0 or i >= n for i in keep):
        raise DimensionError(f"keep indices {keep} out of range for {n} sites")
    t = a.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # trace highest axes first so lower indices stay valid
    cur = n
    for i in sorted(traced, reverse=True):
        t = np.trace(t, axis1=i, axis2=i + cur)
        cur -= 1
    d_keep = int(np.prod([dims[i] for i in keep])) if keep else 1
    return t.reshape(d_keep, d_keep)


def trace_norm(m, validate=True):
    """Sum of absolute eigenvalues of a Hermitian matrix."""
    a = check_hermitian(m) if validate else 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
    return float(np.sum(np.abs(np.linalg.eigvalsh(a))))


def trace_norms(stack):
    """Trace norms of a stack of Hermitian matrices with shape ``(..., n, n)``."""
    a = np.asarray(stack, dtype=complex)
    a = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    return np.sum(np.abs(np.linalg.eigvalsh(a)), axis=-1)


def trace_distance(rho, sigma):
    """Half the trace norm of the difference."""
    return 0.5 * trace_norm(np.asarray(rho) - np.asarray(sigma))


def check_unit_vector(psi, tol=1e-12):
    v = np.asarray(psi, dtype=complex).reshape(-1)
    nrm = np.linalg.norm(v)
    if abs(nrm - 1.0) > tol:
        raise ValidationError(f"state vector has norm {nrm!r}, expected 1")
    return v


def fidelity_with_pure(psi, rho):
    """``<psi|rho|psi>`` for a unit vector ``psi``."""
    v = check_unit_vector(psi)
    a = as_square(rho)
    if a.shape[0] != v.size:
        raise DimensionError("vector and matrix dimensions differ")
    val = np.vdot(v, a @ v)
    if abs(val.imag) > 1e-12 * max(1.0, abs(val.real)):
        raise ValidationError("fidelity has a non-negligible imaginary part")
    return float(min(1.0, max(0.0, val.real)))


def ket(index, d):
    v = np.zeros(d, dtype=complex)
    v[index] = 1.0
    return v


def projector(psi):
    v = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


def maximally_mixed(d):
    return np.eye(d, dtype=complex) / d


def haar_vector(d, rng):
    """Haar-random unit vector from normalized complex Gaussians."""
    rng = as_generator(rng)
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def haar_vectors(count, d, rng):
    """``count`` independent Haar-random unit vectors as rows."""
    rng = as_generator(rng)
    v = rng.standard_normal((count, d)) + 1j * rng.standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_density_matrix(d, rng, rank=None):
    """Random mixed state from the induced (Ginibre) measure."""
    rng = as_generator(rng)
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(d, rng):
    rng = as_generator(rng)
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return 0.5 * (g + g.conj().T)


def project_to_density_matrix(m):
    """Nearest density matrix in Frobenius norm.

    Eigenvalues are projected onto the probability simplex while the
    eigenvectors are kept.
    """
    vals, vecs = np.linalg.eigh(check_hermitian(m, tol=1e-8))
    u = np.sort(vals)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, u.size + 1)
    cut = idx[u - css / idx > 0][-1]
    shift = css[cut - 1] / cut
    p = np.maximum(vals - shift, 0.0)
    out = (vecs * p) @ vecs.conj().T
    return 0.5 * (out + out.conj().T)
