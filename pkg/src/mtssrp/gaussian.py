"""Gaussian stream models: diagonal or full covariance, subset marginals,
likelihood ratios on observed coordinates, and seeded sampling.

All types are immutable after construction and safe to share across
parallel workers; random state is always passed in by the caller.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

LOG_TWO_PI = float(np.log(2.0 * np.pi))

# Sub-block Cholesky factors are memoised per model; index sets repeat
# heavily once a planner starts exploiting, so a small cache suffices.
_SUBBLOCK_CACHE_SIZE = 128

_SYMMETRY_TOL = 1e-10


def as_generator(seed) -> np.random.Generator:
    """Coerce an int seed, SeedSequence, or Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _readonly(arr: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


class GaussianModel:
    """A p-dimensional Gaussian, parameterised by mean and either a vector
    of per-coordinate variances (diagonal covariance) or a full symmetric
    positive-definite covariance matrix.

    Diagonal models keep the fast closed-form paths; full models fall back
    to sub-block Cholesky factorisations for subset marginals.
    """

    __slots__ = ("mean", "variances", "cov", "_chol", "_subblock_cache")

    def __init__(self, mean, variances=None, cov=None):
        if (variances is None) == (cov is None):
            raise ValueError("provide exactly one of variances or cov")
        self.mean = _readonly(np.atleast_1d(mean))
        if self.mean.ndim != 1:
            raise ValueError("mean must be a vector")
        p = self.mean.shape[0]
        if variances is not None:
            v = _readonly(np.atleast_1d(variances))
            if v.shape != (p,):
                raise ValueError(f"variances shape {v.shape} != mean shape ({p},)")
            if not np.all(v > 0.0):
                raise ValueError("diagonal variances must all be > 0")
            self.variances = v
            self.cov = None
            self._chol = None
        else:
            c = _readonly(np.atleast_2d(cov))
            if c.shape != (p, p):
                raise ValueError(f"cov shape {c.shape} != ({p}, {p})")
            scale = max(1.0, float(np.max(np.abs(c))))
            if np.max(np.abs(c - c.T)) > _SYMMETRY_TOL * scale:
                raise ValueError("covariance matrix is not symmetric")
            try:
                chol = np.linalg.cholesky(c)
            except np.linalg.LinAlgError as err:
                raise ValueError("covariance matrix is not positive definite") from err
            self.variances = None
            self.cov = c
            self._chol = chol
        self._subblock_cache = OrderedDict()

    @classmethod
    def diagonal(cls, mean, variances) -> "GaussianModel":
        return cls(mean, variances=variances)

    @classmethod
    def standard(cls, dim: int) -> "GaussianModel":
        """N(0, I) in the given dimension."""
        return cls(np.zeros(dim), variances=np.ones(dim))

    @classmethod
    def full(cls, mean, cov) -> "GaussianModel":
        return cls(mean, cov=cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.variances is not None

    def dense_cov(self) -> np.ndarray:
        if self.is_diagonal:
            return np.diag(self.variances)
        return np.asarray(self.cov)

    def shifted(self, shift) -> "GaussianModel":
        """Same covariance, mean moved by `shift`."""
        mean = self.mean + np.asarray(shift, dtype=np.float64)
        if self.is_diagonal:
            return GaussianModel(mean, variances=self.variances)
        return GaussianModel(mean, cov=self.cov)

    def equals(self, other: "GaussianModel") -> bool:
        """Exact equality of mean and (densified) covariance."""
        if self.dim != other.dim:
            return False
        if not np.array_equal(self.mean, other.mean):
            return False
        if self.is_diagonal and other.is_diagonal:
            return np.array_equal(self.variances, other.variances)
        return np.array_equal(self.dense_cov(), other.dense_cov())

    def _subblock_cholesky(self, key: tuple) -> np.ndarray:
        cache = self._subblock_cache
        chol = cache.get(key)
        if chol is None:
            idx = np.asarray(key, dtype=np.intp)
            chol = np.linalg.cholesky(self.cov[np.ix_(idx, idx)])
            if len(cache) >= _SUBBLOCK_CACHE_SIZE:
                cache.popitem(last=False)
            cache[key] = chol
        else:
            cache.move_to_end(key)
        return chol

    def __repr__(self) -> str:  # pragma: no cover
        kind = "diagonal" if self.is_diagonal else "full"
        return f"GaussianModel(dim={self.dim}, cov={kind})"


@dataclass(frozen=True)
class Observation:
    """Observed coordinates of one stream tick.

    `indices` is the strictly increasing set of sensor indices read at
    time `time`; `values` holds the matching readings.
    """

    time: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        val = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.time < 1:
            raise ValueError("observation time must be >= 1")
        if idx.shape[0] != val.shape[0]:
            raise ValueError("indices and values must have matching length")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValueError("indices must be strictly increasing and non-negative")
        idx.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def size(self) -> int:
        return self.indices.shape[0]


class ModeBank:
    """The in-control model plus the candidate failure-mode models.

    On construction every pairwise dimension is checked, and no mode may
    coincide with the base model (such a mode could never be told apart
    from in-control behaviour). For all-diagonal banks the per-coordinate
    likelihood-ratio coefficients are precomputed once:

        llr_k(y over C) = sum_{j in C} quad[k,j]*y_j^2 + lin[k,j]*y_j + const[k,j]

    which turns every monitoring update into a couple of small matrix
    products.
    """

    def __init__(self, base: GaussianModel, modes, labels=None):
        modes = tuple(modes)
        if len(modes) < 1:
            raise ValueError("need at least one failure mode")
        for m in modes:
            if m.dim != base.dim:
                raise ValueError("all models must share the base dimension")
        for i, m in enumerate(modes):
            if m.equals(base):
                raise ValueError(f"mode {i} is identical to the base model")
        if labels is None:
            labels = tuple(f"mode_{k}" for k in range(len(modes)))
        else:
            labels = tuple(str(s) for s in labels)
            if len(labels) != len(modes):
                raise ValueError("labels must match the number of modes")
        self.base = base
        self.modes = modes
        self.labels = labels
        self.is_diagonal = base.is_diagonal and all(m.is_diagonal for m in modes)
        if self.is_diagonal:
            self._build_coefficients()
        else:
            self._llr_quad = self._llr_lin = self._llr_const = None
        self._supports = None

    def _build_coefficients(self):
        base = self.base
        mu0 = base.mean
        v0 = base.variances
        means = np.stack([m.mean for m in self.modes])
        variances = np.stack([m.variances for m in self.modes])
        self.mode_means = _readonly(means)
        self.mode_variances = _readonly(variances)
        quad = 0.5 / v0 - 0.5 / variances
        lin = means / variances - mu0 / v0
        const = (
            0.5 * np.log(v0)
            - 0.5 * np.log(variances)
            + 0.5 * mu0**2 / v0
            - 0.5 * means**2 / variances
        )
        self._llr_quad = _readonly(quad)
        self._llr_lin = _readonly(lin)
        self._llr_const = _readonly(const)
        self._llr_const_total = _readonly(const.sum(axis=1))

    @property
    def K(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return self.base.dim

    def mode_supports(self) -> list[np.ndarray]:
        """Per mode, the coordinates where it differs from the base model
        (mean or variance). Computed lazily; diagonal banks only."""
        if self._supports is None:
            if not self.is_diagonal:
                raise ValueError("mode supports are defined for diagonal banks only")
            base_mean = self.base.mean
            base_var = self.base.variances
            sup = []
            for m in self.modes:
                diff = (m.mean != base_mean) | (m.variances != base_var)
                sup.append(np.flatnonzero(diff))
            self._supports = sup
        return self._supports

    def __repr__(self) -> str:  # pragma: no cover
        return f"ModeBank(K={self.K}, dim={self.dim}, diagonal={self.is_diagonal})"


def _diag_marginal_log_density(model: GaussianModel, idx, vals) -> float:
    mu = model.mean[idx]
    v = model.variances[idx]
    quad = (vals - mu) ** 2 / v
    return float(-0.5 * (idx.shape[0] * LOG_TWO_PI + np.sum(np.log(v)) + np.sum(quad)))


def _full_marginal_log_density(model: GaussianModel, idx, vals) -> float:
    key = tuple(int(i) for i in idx)
    chol = model._subblock_cholesky(key)
    centered = vals - model.mean[idx]
    w = np.linalg.solve(chol, centered)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return float(-0.5 * (idx.shape[0] * LOG_TWO_PI + log_det + w @ w))


def marginal_log_density(model: GaussianModel, obs: Observation) -> float:
    """Log-density of the model's marginal on obs.indices at obs.values.

    The marginal of a Gaussian over a coordinate subset is the Gaussian of
    the corresponding mean/covariance sub-block. An empty index set has
    log-density 0 (the empty product).
    """
    idx = obs.indices
    if idx.size == 0:
        return 0.0
    if idx[-1] >= model.dim:
        raise ValueError("observation index out of range for model dimension")
    if model.is_diagonal:
        return _diag_marginal_log_density(model, idx, obs.values)
    return _full_marginal_log_density(model, idx, obs.values)


def log_likelihood_ratio(bank: ModeBank, k: int, obs: Observation) -> float:
    """log of mode-k marginal density over base marginal density at obs."""
    if not 0 <= k < bank.K:
        raise IndexError(f"mode index {k} out of range [0, {bank.K})")
    return marginal_log_density(bank.modes[k], obs) - marginal_log_density(bank.base, obs)


def llr_all_modes(bank: ModeBank, indices: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Vectorised log-likelihood ratios of every mode against the base for
    one partially observed tick. Coordinates where a mode equals the base
    contribute exactly zero.
    """
    if bank.is_diagonal:
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size == 0:
            return np.zeros(bank.K)
        if idx.size == bank.dim:
            quad = bank._llr_quad
            lin = bank._llr_lin
            const = bank._llr_const_total
            vals = values
        else:
            quad = bank._llr_quad[:, idx]
            lin = bank._llr_lin[:, idx]
            const = bank._llr_const[:, idx].sum(axis=1)
            vals = values
        return quad @ (vals * vals) + lin @ vals + const
    obs = Observation(1, indices, values)
    return np.array([log_likelihood_ratio(bank, k, obs) for k in range(bank.K)])


def per_coordinate_llr(bank: ModeBank, k: int, x: np.ndarray) -> np.ndarray:
    """Length-p vector of per-coordinate log-likelihood ratios of mode k
    against the base at the full vector x; diagonal banks only."""
    if not bank.is_diagonal:
        raise ValueError("per-coordinate ratios require a diagonal bank")
    return bank._llr_quad[k] * x * x + bank._llr_lin[k] * x + bank._llr_const[k]


def sample_model(model: GaussianModel, rng) -> np.ndarray:
    """One draw from the model; reproducible given the generator state."""
    rng = as_generator(rng)
    z = rng.standard_normal(model.dim)
    if model.is_diagonal:
        return model.mean + np.sqrt(model.variances) * z
    return model.mean + model._chol @ z


def sample_mode(bank: ModeBank, k: int, rng) -> np.ndarray:
    """One draw from failure mode k."""
    if not 0 <= k < bank.K:
        raise IndexError(f"mode index {k} out of range [0, {bank.K})")
    return sample_model(bank.modes[k], rng)
