"""Exception hierarchy shared across the package."""


class GvmcError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GvmcError):
    """Invalid or unreadable run configuration."""


class SingularGram(GvmcError):
    """Gram matrix condition number exceeds the rank tolerance."""


class SingularInput(GvmcError):
    """Matrix determinant underflows where an inverse is required."""


class NonDiagonalizable(GvmcError):
    """Eigenvector matrix too ill-conditioned to trust the decomposition."""


class DegenerateSubspace(GvmcError):
    """Fidelity eigenvalues fall outside [0, 1] beyond tolerance."""


class NonBipartite(GvmcError):
    """Sublattice sign gauge requested on a non-bipartite geometry."""


class AmplitudeOverflow(GvmcError):
    """Log-amplitude magnitude beyond the configured bound."""


class AnsatzInitError(GvmcError):
    """Random initialization produced linearly dependent basis columns."""


class SingularLocalMatrix(GvmcError):
    """|det| of a sampled overlap matrix underflows during estimation."""


class InitFailure(GvmcError):
    """Chain initialization retry budget exhausted."""


class EmptyBatch(GvmcError):
    """Estimator invoked on an empty (or too small) sample batch."""


class SingularMeanOverlap(GvmcError):
    """Mean ratio matrix not invertible; variance-form fidelity unusable."""


class ZeroEnergy(GvmcError):
    """V-score undefined because the energy estimate is ~0."""


class IndefiniteMatrix(GvmcError):
    """Regularized metric failed a positive-definite factorization."""


class SingularQgt(GvmcError):
    """Coordinate-vector metric not invertible in tangent projection."""


class NoConvergence(GvmcError):
    """Iterative eigensolver exhausted its iteration budget."""


class SectorTooLarge(GvmcError):
    """Requested exact enumeration/diagonalization beyond supported size."""


class HashMismatch(GvmcError):
    """Checkpoint was produced by a different configuration."""
