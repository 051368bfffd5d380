"""Core data types for the N-sector economy and the share accounting identities.

Matrix orientation everywhere: rows are the purchasing industry i, columns the
supplying input j, so a_ij is sector i's domestic spending on good j over
sector i's revenue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvertibilityError

# Shares below this are treated as exact zeros so downstream log-domain code
# never sees denormal noise.
SHARE_EPS = 1e-14

ROW_SUM_TOL = 1e-10
IDENTITY_TOL = 1e-10

POWER_ITERATION_CAP = 1000
POWER_ITERATION_TOL = 1e-12


def _frozen_array(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Economy:
    """Sector index: codes, display labels, and tradeability flags."""

    codes: tuple[str, ...]
    labels: tuple[str, ...]
    tradeable: np.ndarray

    def __post_init__(self):
        codes = tuple(str(c) for c in self.codes)
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "tradeable", _frozen_array(self.tradeable, bool))
        if len(codes) == 0:
            raise ValueError("economy needs at least one sector")
        if len(set(codes)) != len(codes):
            raise ValueError("sector codes must be unique")
        if len(labels) != len(codes) or self.tradeable.shape != (len(codes),):
            raise ValueError("codes, labels, tradeable must have equal length")

    @property
    def n_sectors(self) -> int:
        return len(self.codes)

    def index_of(self, code: str) -> int:
        return self.codes.index(code)

    def to_dict(self) -> dict:
        return {"codes": list(self.codes), "labels": list(self.labels),
                "tradeable": [bool(f) for f in self.tradeable]}

    @classmethod
    def from_dict(cls, d: dict) -> "Economy":
        return cls(codes=tuple(d["codes"]), labels=tuple(d["labels"]),
                   tradeable=np.asarray(d["tradeable"], dtype=bool))


@dataclass(frozen=True, eq=False)
class IOSnapshot:
    """One year of share accounts.

    omega: N x N intermediate expenditure shares (rows sum to 1 where the
        purchaser has any intermediate spend).
    phi:   N x N domestic fraction of spending on each input, in [0, 1].
    gamma: labor share of revenue per sector.
    a:     input-output matrix, a_ij = (1 - gamma_i) * omega_ij * phi_ij.
    a0:    household consumption shares (sum 1).
    lam:   sales over total household expenditure (Domar weights).
    nx:    export expenditure in the same units as lam.
    """

    year: int
    omega: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray
    a: np.ndarray
    a0: np.ndarray
    lam: np.ndarray
    nx: np.ndarray

    def __post_init__(self):
        for name in ("omega", "phi", "gamma", "a", "a0", "lam", "nx"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        n = self.gamma.shape[0]
        if self.omega.shape != (n, n) or self.phi.shape != (n, n) or self.a.shape != (n, n):
            raise ValueError("matrix fields must be N x N")
        for name in ("a0", "lam", "nx"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must be an N-vector")

    @property
    def n_sectors(self) -> int:
        return self.gamma.shape[0]

    def to_dict(self) -> dict:
        out = {"year": self.year}
        for name in ("omega", "phi", "gamma", "a", "a0", "lam", "nx"):
            out[name] = getattr(self, name).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "IOSnapshot":
        return cls(year=int(d["year"]),
                   **{name: np.asarray(d[name], dtype=float)
                      for name in ("omega", "phi", "gamma", "a", "a0",
                                   "lam", "nx")})


@dataclass(frozen=True, eq=False)
class Elasticities:
    """Substitution elasticities of the nested-CES structure.

    sigma:     labor vs. input-bundle elasticity (shared across sectors).
    theta:     per-sector elasticity across intermediate inputs; 0 is
               Leontief, 1 Cobb-Douglas.
    xi:        domestic vs. imported variety elasticity; must differ from 1
               (the reduced-form coefficient (xi - theta)/(xi - 1) is
               singular there).
    nu:        household elasticity across domestic goods.
    xi_export: export demand elasticity.
    """

    sigma: float
    theta: np.ndarray
    xi: float
    nu: float
    xi_export: float

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen_array(np.atleast_1d(self.theta)))
        for name in ("sigma", "xi", "nu", "xi_export"):
            object.__setattr__(self, name, float(getattr(self, name)))
        values = [self.sigma, self.xi, self.nu, self.xi_export]
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise ValueError("scalar elasticities must be finite and positive")
        if not (np.isfinite(self.theta).all() and (self.theta >= 0).all()):
            raise ValueError("theta entries must be finite and nonnegative")
        if abs(self.xi - 1.0) < 1e-9:
            raise ValueError("xi = 1 is singular in the reduced form")

    @property
    def n_sectors(self) -> int:
        return self.theta.shape[0]


def spectral_radius(a: np.ndarray, max_iter: int = POWER_ITERATION_CAP,
                    tol: float = POWER_ITERATION_TOL) -> float | None:
    """Dominant-eigenvalue magnitude by power iteration.

    Returns None when the iteration does not settle within the cap, which
    callers must treat as failure (conservative: never certifies a radius it
    could not confirm).
    """
    a = np.asarray(a, dtype=float)
    if (a < 0).any():
        # |a| bounds the radius of a sign-indefinite matrix from above, so a
        # pass here certifies invertibility and a fail stays conservative.
        a = np.abs(a)
    n = a.shape[0]
    # The +I shift moves every eigenvalue by exactly 1 and makes the iteration
    # primitive, so cyclic input networks (i buys only from j, j only from i)
    # still converge instead of oscillating.
    shifted = a + np.eye(n)
    x = np.full(n, 1.0 / n)
    estimate = np.inf
    for _ in range(max_iter):
        y = shifted @ x
        norm = y.sum()
        x = y / norm
        if abs(norm - estimate) < tol:
            return max(norm - 1.0, 0.0)
        estimate = norm
    return None


def leontief_inverse(a: np.ndarray) -> np.ndarray:
    """Psi = (I - a)^{-1}, guarded by an explicit spectral-radius check."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("input-output matrix must be square")
    rho = spectral_radius(a)
    if rho is None:
        raise InvertibilityError(
            "spectral-radius check did not converge; refusing to invert")
    if rho >= 1.0:
        raise InvertibilityError(
            f"input-output matrix has spectral radius {rho:.6f} >= 1")
    try:
        return np.linalg.solve(np.eye(a.shape[0]) - a, np.eye(a.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise InvertibilityError(f"(I - a) is singular: {exc}") from exc


def build_io_matrix(omega: np.ndarray, phi: np.ndarray,
                    gamma: np.ndarray) -> np.ndarray:
    """a_ij = (1 - gamma_i) * omega_ij * phi_ij, with tiny shares snapped to 0."""
    omega = np.asarray(omega, dtype=float)
    phi = np.asarray(phi, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    n = gamma.shape[0]
    if omega.shape != (n, n) or phi.shape != (n, n):
        raise ValueError("omega and phi must be N x N with N = len(gamma)")
    for name, arr in (("omega", omega), ("phi", phi), ("gamma", gamma)):
        if arr.min() < 0.0 or arr.max() > 1.0 + 1e-12:
            raise ValueError(f"{name} entries must lie in [0, 1]")
    a = (1.0 - gamma)[:, None] * omega * phi
    a[a < SHARE_EPS] = 0.0
    return a


def validate_snapshot(s: IOSnapshot) -> list[str]:
    """Check every snapshot invariant; return one message per violation.

    Diagnostics only: an empty list means the snapshot is internally
    consistent and Leontief-invertible.
    """
    out: list[str] = []
    n = s.n_sectors

    spend = s.omega.sum(axis=1)
    for i in np.nonzero(spend > SHARE_EPS)[0]:
        if abs(spend[i] - 1.0) > ROW_SUM_TOL:
            out.append(f"omega row {i} sums to {spend[i]:.12f}, expected 1")

    implied = (1.0 - s.gamma)[:, None] * s.omega * s.phi
    gap = np.abs(s.a - implied)
    bad = np.argwhere(gap > IDENTITY_TOL)
    for i, j in bad[:10]:
        out.append(
            f"a[{i},{j}] = {s.a[i, j]:.12f} differs from "
            f"(1-gamma)*omega*phi = {implied[i, j]:.12f}")
    if len(bad) > 10:
        out.append(f"io-matrix identity violated at {len(bad)} cells in total")

    if abs(s.a0.sum() - 1.0) > ROW_SUM_TOL:
        out.append(f"a0 sums to {s.a0.sum():.12f}, expected 1")

    for name, arr in (("omega", s.omega), ("gamma", s.gamma), ("a0", s.a0),
                      ("lam", s.lam), ("nx", s.nx), ("a", s.a)):
        neg = np.argwhere(np.atleast_2d(arr) < -SHARE_EPS)
        if neg.size:
            out.append(f"{name} has negative entries at {neg[:5].tolist()}")
    if (s.phi < -SHARE_EPS).any() or (s.phi > 1.0 + 1e-12).any():
        idx = np.argwhere((s.phi < -SHARE_EPS) | (s.phi > 1.0 + 1e-12))
        out.append(f"phi outside [0, 1] at {idx[:5].tolist()}")
    if (s.gamma > 1.0 + 1e-12).any():
        idx = np.nonzero(s.gamma > 1.0 + 1e-12)[0]
        out.append(f"gamma above 1 at sectors {idx.tolist()}")

    rho = spectral_radius(s.a)
    if rho is None:
        out.append("spectral-radius power iteration did not converge")
    elif rho >= 1.0:
        out.append(f"io matrix spectral radius {rho:.6f} >= 1, not invertible")

    return out
