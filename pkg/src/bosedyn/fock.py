"""Bosonic Fock spaces over finitely many modes, the N-body Hamiltonian, the
excitation map around a condensate, and the fluctuation generator with its
number-dependent corrections.

Excitation vectors are stored in the Fock space over *all* L modes truncated at
M particles; a vector belongs to the excitation space of u when it has no
occupation along u.  That property is preserved by the dynamics and can be
checked with :func:`condensate_occupation`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from math import comb, factorial
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigError, DomainError, NormalizationError, SizeError, ToleranceError
from .modes import ModeModel, ModeTrajectory

DIMENSION_CAP = 200_000
DROP_TOL = 1e-14


def sector_dimension(L: int, n: int) -> int:
    return comb(n + L - 1, n)


def fock_dimension(L: int, n_max: int, n_min: int = 0) -> int:
    return sum(sector_dimension(L, n) for n in range(n_min, n_max + 1))


def _compositions(n: int, L: int) -> np.ndarray:
    """All occupation tuples of n bosons in L modes (stars and bars)."""
    if L == 1:
        return np.array([[n]], dtype=np.int64)
    bars = np.array(list(combinations(range(n + L - 1), L - 1)), dtype=np.int64).reshape(-1, L - 1)
    edges = np.concatenate([np.full((len(bars), 1), -1), bars, np.full((len(bars), 1), n + L - 1)], axis=1)
    return np.diff(edges, axis=1) - 1


class FockSpace:
    """Occupation basis of the sectors n_min..n_max over L modes, sorted by code."""

    def __init__(self, L: int, n_max: int, n_min: int = 0, cap: int = DIMENSION_CAP):
        if L < 1 or n_max < n_min or n_min < 0:
            raise ConfigError(f"invalid Fock space L={L}, sectors {n_min}..{n_max}")
        dim = fock_dimension(L, n_max, n_min)
        if dim > cap:
            lower = max(n for n in range(n_max + 1) if fock_dimension(L, n, min(n_min, n)) <= cap) if \
                fock_dimension(L, n_min, n_min) <= cap else None
            raise SizeError(f"Fock dimension {dim} exceeds cap {cap} for L={L}, n<={n_max}; "
                            f"largest admissible n_max at this L: {lower}")
        self.L, self.n_max, self.n_min = L, n_max, n_min
        self.base = n_max + 2
        if self.base ** L >= 2**62:
            raise SizeError("occupation codes overflow 64 bits; reduce L or n_max")
        occ = np.concatenate([_compositions(n, L) for n in range(n_min, n_max + 1)])
        self.weights = self.base ** np.arange(L, dtype=np.int64)
        codes = occ @ self.weights
        order = np.argsort(codes)
        self.occ = occ[order]
        self.codes = codes[order]
        self.n = self.occ.sum(axis=1)
        self.dim = len(self.codes)

    def index(self, codes: np.ndarray) -> np.ndarray:
        """Positions of the given codes, -1 where absent."""
        codes = np.asarray(codes, dtype=np.int64)
        pos = np.searchsorted(self.codes, codes)
        pos = np.minimum(pos, self.dim - 1)
        return np.where(self.codes[pos] == codes, pos, -1)

    def state_index(self, occupation) -> int:
        return int(self.index(np.asarray(occupation, dtype=np.int64) @ self.weights))

    def basis_vector(self, occupation) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        i = self.state_index(occupation)
        if i < 0:
            raise DomainError(f"occupation {tuple(occupation)} not in this space")
        v[i] = 1.0
        return v

    def vacuum(self) -> np.ndarray:
        return self.basis_vector([0] * self.L)

    def sector_mask(self, n: int) -> np.ndarray:
        return self.n == n

    def sector_norms(self, v: np.ndarray) -> np.ndarray:
        """||1^{(n)} v||^2 for n = 0..n_max."""
        return np.bincount(self.n, weights=np.abs(v) ** 2, minlength=self.n_max + 1)

    def transfer(self, v: np.ndarray, target: "FockSpace") -> np.ndarray:
        """Copies coefficients into another space with the same L (dropping absent states)."""
        if target.L != self.L:
            raise ConfigError("spaces have different numbers of modes")
        out = np.zeros(target.dim, dtype=complex)
        fits = self.n <= target.n_max
        idx = np.full(self.dim, -1)
        idx[fits] = target.index(self.occ[fits] @ target.weights)
        keep = idx >= 0
        out[idx[keep]] = v[keep]
        return out

    @cached_property
    def annihilators(self) -> list[sp.csr_matrix]:
        ops = []
        for p in range(self.L):
            src = np.nonzero(self.occ[:, p] > 0)[0]
            tgt = self.index(self.codes[src] - self.weights[p])
            keep = tgt >= 0
            vals = np.sqrt(self.occ[src[keep], p].astype(float))
            ops.append(sp.csr_matrix((vals, (tgt[keep], src[keep])), shape=(self.dim, self.dim)))
        return ops

    @cached_property
    def a_stack(self) -> sp.csr_matrix:
        """[a_0; ...; a_{L-1}], shape (L*D, D)."""
        return sp.vstack(self.annihilators, format="csr")

    @cached_property
    def adag_stack(self) -> sp.csr_matrix:
        """[a*_0, ..., a*_{L-1}], shape (D, L*D); maps stacked vectors z to sum_p a*_p z_p."""
        return self.a_stack.conj().T.tocsr()

    @cached_property
    def ahc_stack(self) -> sp.csr_matrix:
        """[a_0, ..., a_{L-1}], shape (D, L*D); maps z to sum_p a_p z_p."""
        return sp.hstack(self.annihilators, format="csr")

    @cached_property
    def cre_stack(self) -> sp.csr_matrix:
        """[a*_0; ...; a*_{L-1}], shape (L*D, D)."""
        return sp.vstack([a.conj().T for a in self.annihilators], format="csr")

    # vectorized ladder actions
    def lower(self, v: np.ndarray) -> np.ndarray:
        """Rows a_p v, shape (L, D)."""
        return (self.a_stack @ v).reshape(self.L, self.dim)

    def lower2(self, v: np.ndarray) -> np.ndarray:
        """a_r a_s v, shape (L, L, D)."""
        y1 = self.lower(v)
        y2 = self.a_stack @ y1.T  # (L*D, L): rows (r, b), column s
        return y2.reshape(self.L, self.dim, self.L).transpose(0, 2, 1)

    def raise_rows(self, v: np.ndarray) -> np.ndarray:
        """Rows a*_p v, shape (L, D)."""
        return (self.cre_stack @ v).reshape(self.L, self.dim)

    def create(self, z: np.ndarray) -> np.ndarray:
        """sum_p a*_p z_p for z of shape (L, D)."""
        return self.adag_stack @ z.reshape(-1)

    def create_many(self, z: np.ndarray) -> np.ndarray:
        """sum_p a*_p z[p, :, j] for z of shape (L, D, m); returns (D, m)."""
        return self.adag_stack @ z.reshape(self.L * self.dim, -1)

    def annihilate(self, z: np.ndarray) -> np.ndarray:
        """sum_p a_p z_p for z of shape (L, D)."""
        return self.ahc_stack @ z.reshape(-1)

    def a_of(self, f: np.ndarray, v: np.ndarray) -> np.ndarray:
        """a(f) v = sum_p conj(f_p) a_p v."""
        return f.conj() @ self.lower(v)

    def adag_of(self, f: np.ndarray, v: np.ndarray) -> np.ndarray:
        """a*(f) v = sum_p f_p a*_p v."""
        return self.adag_stack @ np.outer(f, v).reshape(-1)


# ---------------------------------------------------------------- number-conserving assembly


def _assemble(space: FockSpace, terms, rows, cols, vals) -> sp.csr_matrix:
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=int)
        v = np.zeros(0)
    m = sp.coo_matrix((v, (r, c)), shape=(space.dim, space.dim)).tocsr()
    m.sum_duplicates()
    m.data[np.abs(m.data) < DROP_TOL] = 0
    m.eliminate_zeros()
    return m


def one_body_operator(space: FockSpace, A: np.ndarray) -> sp.csr_matrix:
    """dGamma(A) = sum_pq A_pq a*_p a_q, assembled from occupation arithmetic."""
    occ = space.occ.astype(float)
    rows, cols, vals = [], [], []
    for p, q in zip(*np.nonzero(np.abs(A) > 0)):
        amp = np.sqrt(occ[:, q]) * np.sqrt(occ[:, p] + 1.0 - (p == q))
        src = np.nonzero(amp > 0)[0]
        tgt = space.index(space.codes[src] - space.weights[q] + space.weights[p])
        keep = tgt >= 0
        rows.append(tgt[keep])
        cols.append(src[keep])
        vals.append(A[p, q] * amp[src[keep]])
    return _assemble(space, None, rows, cols, vals)


def two_body_operator(space: FockSpace, W: np.ndarray) -> sp.csr_matrix:
    """sum_pqrs W[p,q,r,s] a*_p a*_q a_r a_s, assembled from occupation arithmetic."""
    occ = space.occ.astype(float)
    rows, cols, vals = [], [], []
    for p, q, r, s in zip(*np.nonzero(np.abs(W) > 0)):
        amp = np.sqrt(occ[:, s])
        amp = amp * np.sqrt(np.maximum(occ[:, r] - (r == s), 0.0))
        amp = amp * np.sqrt(np.maximum(occ[:, q] + 1.0 - (q == s) - (q == r), 0.0))
        amp = amp * np.sqrt(np.maximum(occ[:, p] + 1.0 + (p == q) - (p == s) - (p == r), 0.0))
        src = np.nonzero(amp > 0)[0]
        delta = space.weights[p] + space.weights[q] - space.weights[r] - space.weights[s]
        tgt = space.index(space.codes[src] + delta)
        keep = tgt >= 0
        rows.append(tgt[keep])
        cols.append(src[keep])
        vals.append(W[p, q, r, s] * amp[src[keep]])
    return _assemble(space, None, rows, cols, vals)


def build_HN(model: ModeModel, N: int, cap: int = DIMENSION_CAP) -> tuple[sp.csr_matrix, FockSpace]:
    """N-body Hamiltonian sum T a*a + (1/(2(N-1))) sum W a*a*aa on the N-particle sector."""
    if N < 1:
        raise ConfigError("N must be positive")
    space = FockSpace(model.L, N, N, cap=cap)
    H = one_body_operator(space, np.diag(model.T))
    if N > 1 and not model.is_free():
        H = H + two_body_operator(space, model.W) / (2.0 * (N - 1))
    return H.tocsr(), space


def dense_two_body_hamiltonian(model: ModeModel) -> np.ndarray:
    """Two-particle Hamiltonian T(x)1 + 1(x)T + W/(2(N-1)) with N = 2 on the symmetric subspace,
    built from the tensor-product space directly (orthonormal symmetric basis)."""
    L = model.L
    T = np.diag(model.T)
    H2 = np.kron(T, np.eye(L)) + np.kron(np.eye(L), T) + model.W.reshape(L * L, L * L)
    vecs = []
    for p in range(L):
        for q in range(p, L):
            v = np.zeros((L, L))
            v[p, q] += 1
            v[q, p] += 1
            vecs.append(v.ravel() / np.linalg.norm(v))
    S = np.array(vecs).T
    return S.T @ H2 @ S


# ---------------------------------------------------------------- Krylov propagation


def expm_krylov(matvec: Callable[[np.ndarray], np.ndarray], v: np.ndarray, dt: float, *,
                tol: float = 1e-12, m_max: int = 40, norm_est: float | None = None) -> np.ndarray:
    """exp(-i dt H) v for Hermitian H given by its action, via Lanczos with full
    reorthogonalization.  The step is subdivided when the Krylov space does not converge."""
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy()
    sub = 1
    for _ in range(12):
        try:
            w = v
            for _ in range(sub):
                w = _lanczos_step(matvec, w, dt / sub, tol / sub, m_max)
            return w
        except _NoConvergence:
            sub *= 2
    raise ToleranceError(f"Krylov propagation did not converge (dt={dt}, {sub} substeps)")


class _NoConvergence(Exception):
    pass


def _lanczos_step(matvec, v, dt, tol, m_max):
    beta0 = np.linalg.norm(v)
    D = len(v)
    m_max = min(m_max, D)
    V = np.zeros((m_max + 1, D), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[0] = v / beta0
    for j in range(m_max):
        w = matvec(V[j])
        alpha[j] = np.real(np.vdot(V[j], w))
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
        # full reorthogonalization, twice for stability
        for _ in range(2):
            w = w - V[: j + 1].T @ (V[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        m = j + 1
        evals, evecs = sla.eigh_tridiagonal(alpha[:m], beta[: m - 1])
        c = evecs @ (np.exp(-1j * dt * evals) * evecs[0].conj())
        # a posteriori error estimate: size of the last coefficient times the residual
        err = beta0 * beta[j] * abs(c[-1])
        if beta[j] < 1e-14 * max(1.0, abs(alpha[j])) or err < tol:
            return beta0 * (V[:m].T @ c)
        V[j + 1] = w / beta[j]
    raise _NoConvergence


def exact_evolve(psi: np.ndarray, H, t_final: float, dt: float, *, tol: float = 1e-12,
                 allow_unnormalized: bool = False) -> np.ndarray:
    """Propagates i dpsi/dt = H psi for time-independent sparse H in Krylov steps of size dt."""
    nrm = np.linalg.norm(psi)
    if not allow_unnormalized and abs(nrm - 1.0) > 1e-6:
        raise NormalizationError(f"state norm {nrm:.9g}; pass allow_unnormalized for non-unit data")
    if t_final == 0:
        return np.asarray(psi, dtype=complex).copy()
    nsteps = max(1, int(np.ceil(t_final / dt - 1e-9)))
    h = t_final / nsteps
    matvec = (lambda x: H @ x) if not callable(H) else H
    out = np.asarray(psi, dtype=complex)
    for _ in range(nsteps):
        out = expm_krylov(matvec, out, h, tol=tol / nsteps)
    return out


# ---------------------------------------------------------------- excitation map


def _gamma_Q(space: FockSpace, u: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    """Projects an n-particle vector onto zero occupation along u:
    sum_k (-1)^k / k! a*(u)^k a(u)^k."""
    out = v.copy()
    lowered = v
    for k in range(1, n + 1):
        lowered = space.a_of(u, lowered)
        raised = lowered
        for _ in range(k):
            raised = space.adag_of(u, raised)
        out = out + ((-1) ** k / factorial(k)) * raised
    return out


def condensate_occupation(space: FockSpace, u: np.ndarray, phi: np.ndarray) -> float:
    """<phi, a*(u) a(u) phi>; zero exactly for excitation vectors."""
    y = space.a_of(u, phi)
    return float(np.real(np.vdot(y, y)))


def excitation_map(psi: np.ndarray, u: np.ndarray, N: int, space: FockSpace) -> np.ndarray:
    """(psi_0, ..., psi_N) with Psi = sum_n a*(u)^{N-n}/sqrt((N-n)!) psi_n.

    ``psi`` lives in ``space`` (sectors 0..N, only sector N populated); the result
    lives in the same space."""
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise NormalizationError("condensate must be normalized")
    out = np.zeros(space.dim, dtype=complex)
    cur = np.asarray(psi, dtype=complex)
    for j in range(0, N + 1):  # j = N - n condensate particles removed
        n = N - j
        if j > 0:
            cur = space.a_of(u, cur) / np.sqrt(j)
        mask = space.sector_mask(n)
        part = np.where(mask, cur, 0.0)
        out += _gamma_Q(space, u, part, n) if n > 0 else part
    return out


def excitation_unmap(phi: np.ndarray, u: np.ndarray, N: int, space: FockSpace, tol: float = 1e-8) -> np.ndarray:
    """sum_n a*(u)^{N-n}/sqrt((N-n)!) psi_n, an N-particle vector in ``space``."""
    if abs(np.linalg.norm(u) - 1.0) > 1e-10:
        raise NormalizationError("condensate must be normalized")
    occ_u = condensate_occupation(space, u, phi)
    if occ_u > tol * max(1.0, np.linalg.norm(phi) ** 2):
        raise DomainError(f"vector has occupation {occ_u:.3e} along the condensate")
    out = np.zeros(space.dim, dtype=complex)
    for n in range(0, min(N, space.n_max) + 1):
        term = np.where(space.sector_mask(n), phi, 0.0)
        if not np.any(term):
            continue
        for j in range(1, N - n + 1):
            term = space.adag_of(u, term) / np.sqrt(j)
        out += term
    return out


# ---------------------------------------------------------------- fluctuation generator


@dataclass
class GeneratorCoefficients:
    """Coefficient tensors of the fluctuation generator at one time."""

    h: np.ndarray  # one-body part of the quadratic Hamiltonian
    K2: np.ndarray  # pairing kernel
    A0: np.ndarray  # one-body matrix of R0
    f1: np.ndarray  # mode function in R1
    C3: np.ndarray  # cubic tensor C[q, r, s]
    B4: np.ndarray  # quartic tensor B[p, q, r, s]

    def combine(self, other: "GeneratorCoefficients", a: float, b: float) -> "GeneratorCoefficients":
        return GeneratorCoefficients(*(a * x + b * y for x, y in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.h, self.K2, self.A0, self.f1, self.C3, self.B4)


def generator_coefficients(model: ModeModel, u: np.ndarray) -> GeneratorCoefficients:
    L = model.L
    Q = np.eye(L) - np.outer(u, u.conj())
    h, K2 = model.bogoliubov_kernels(u)
    M = model.mean_field(u)
    mu = model.mu(u)
    A0 = Q @ (M + model.exchange(u) - mu * np.eye(L)) @ Q
    f1 = Q @ (M @ u)
    W = model.W
    # B = (Q (x) Q) W (Q (x) Q); A = (1 (x) Q) W (Q (x) Q) with the first leg left free
    A = np.einsum("pqrs,rR,sS->pqRS", W, Q, Q, optimize=True)
    C3 = np.einsum("p,qQ,pQrs->qrs", u.conj(), Q, A, optimize=True)
    B4 = np.einsum("pP,qQ,PQrs->pqrs", Q, Q, A, optimize=True)
    return GeneratorCoefficients(h, K2, 0.5 * (A0 + A0.conj().T), f1, C3, B4)


class FluctuationGenerator:
    """Matrix-free action of 1^{<=M} [H(t) + E_N(t)] 1^{<=M} on the truncated Fock space.

    With ``full=False`` only the quadratic Hamiltonian H(t) acts.
    E_N = (1/2) sum_j (R_j + R_j^*) with

        R0 = dGamma(Q[M + K1 - mu]Q) (1 - n)/(N - 1)
        R1 = -2 n sqrt(N - n)/(N - 1) a(Q M u)
        R2 = sum K2 a*a* [sqrt((N - n)(N - n - 1))/(N - 1) - 1]
        R3 = 2 sqrt(N - n)/(N - 1) sum C[q,r,s] a*_q a_r a_s
        R4 = (1/(2(N - 1))) sum B[p,q,r,s] a*_p a*_q a_r a_s

    where n is the excitation number.  R3 carries a factor 2 because the free
    leg of the cubic term can sit on either creation slot.
    """

    def __init__(self, space: FockSpace, model: ModeModel, N: int, condensate: ModeTrajectory | Callable,
                 full: bool = True):
        if space.n_max > N and full:
            raise ConfigError(f"truncation M={space.n_max} exceeds N={N}")
        if space.L != model.L:
            raise ConfigError("space and model have different numbers of modes")
        self.space, self.model, self.N, self.u_of, self.full = space, model, N, condensate, full
        n = space.n.astype(float)
        Nm1 = max(N - 1, 1)
        self.g0 = (1.0 - n) / Nm1
        self.g1 = -2.0 * n * np.sqrt(np.maximum(N - n, 0.0)) / Nm1
        self.g2 = np.sqrt(np.maximum((N - n) * (N - n - 1), 0.0)) / Nm1 - 1.0
        self.g3 = 2.0 * np.sqrt(np.maximum(N - n, 0.0)) / Nm1
        self.g4 = 0.5 / Nm1
        self.interacting = N > 1 and not model.is_free()
        self._cache: dict[float, GeneratorCoefficients] = {}

    def coefficients(self, t: float) -> GeneratorCoefficients:
        c = self._cache.get(t)
        if c is None:
            if len(self._cache) > 64:
                self._cache.clear()
            c = generator_coefficients(self.model, self.u_of(t))
            self._cache[t] = c
        return c

    def apply(self, c: GeneratorCoefficients, v: np.ndarray) -> np.ndarray:
        S = self.space
        L, D = S.L, S.dim
        y1 = S.lower(v)
        out = S.create(c.h @ y1)
        # (1/2)(sum K2 a*a* + h.c.)
        out += 0.5 * S.create(c.K2 @ S.raise_rows(v))
        out += 0.5 * S.annihilate(c.K2.conj() @ y1)
        if not (self.full and self.interacting):
            return out
        half = 0.5
        # R0 is Hermitian: (1/2)(R0 + R0^*) = R0
        out += self.g0 * S.create(c.A0 @ y1)
        # R1 and adjoint
        out += half * self.g1 * (c.f1.conj() @ y1)
        out += half * S.adag_of(c.f1, self.g1 * v)
        # R2 and adjoint
        x = self.g2 * v
        out += half * S.create(c.K2 @ S.raise_rows(x))
        out += half * self.g2 * S.annihilate(c.K2.conj() @ y1)
        # R3 and adjoint
        y2 = S.lower2(v).reshape(L * L, D)
        C = c.C3.reshape(L, L * L)
        out += half * self.g3 * S.create(C @ y2)
        z = S.lower(self.g3 * v)
        t3 = (C.conj().T @ z).reshape(L, L, D)  # [r, s, b]
        inner = S.create_many(t3.transpose(0, 2, 1))  # (D, s): sum_r a*_r t3[r, s]
        out += half * S.create(inner.T)
        # R4 is Hermitian
        t4 = (c.B4.reshape(L * L, L * L) @ y2).reshape(L, L, D)  # [p, q, b]
        inner = S.create_many(t4.transpose(1, 2, 0))  # (D, p): sum_q a*_q t4[p, q]
        out += self.g4 * S.create(inner.T)
        return out

    def matvec(self, t: float) -> Callable[[np.ndarray], np.ndarray]:
        c = self.coefficients(t)
        return lambda v: self.apply(c, v)

    def assemble(self, t: float) -> "GeneratorBundle":
        return build_fock_generator_from(self, t)


@dataclass
class GeneratorBundle:
    """Sparse pieces of the generator at time t (for inspection and small systems)."""

    t: float
    H_bog: sp.csr_matrix
    R: list  # R0..R4 (R_j as defined in FluctuationGenerator)
    G_N: sp.csr_matrix


def _diag(g) -> sp.dia_matrix:
    return sp.diags(np.broadcast_to(np.asarray(g, dtype=float), (len(g),)) if np.ndim(g) else g)


def build_fock_generator_from(gen: FluctuationGenerator, t: float) -> GeneratorBundle:
    S = gen.space
    c = gen.coefficients(t)
    a = S.annihilators
    ad = [x.conj().T.tocsr() for x in a]
    L = S.L
    n = S.dim

    def dgamma(A):
        return sum((A[p, q] * (ad[p] @ a[q]) for p in range(L) for q in range(L) if A[p, q] != 0),
                   sp.csr_matrix((n, n)))

    pair_c = sum((c.K2[p, q] * (ad[p] @ ad[q]) for p in range(L) for q in range(L) if c.K2[p, q] != 0),
                 sp.csr_matrix((n, n)))
    H = dgamma(c.h) + 0.5 * (pair_c + pair_c.conj().T)
    zero = sp.csr_matrix((n, n), dtype=complex)
    if gen.full and gen.interacting:
        R0 = sp.diags(gen.g0) @ dgamma(c.A0)
        R1 = sp.diags(gen.g1) @ sum((c.f1[p].conjugate() * a[p] for p in range(L)), zero)
        R2 = pair_c @ sp.diags(gen.g2)
        cub = sum((c.C3[q, r, s] * (ad[q] @ a[r] @ a[s]) for q in range(L) for r in range(L) for s in range(L)
                   if c.C3[q, r, s] != 0), zero)
        R3 = sp.diags(gen.g3) @ cub
        quart = sum((c.B4[p, q, r, s] * (ad[p] @ ad[q] @ a[r] @ a[s]) for p in range(L) for q in range(L)
                     for r in range(L) for s in range(L) if c.B4[p, q, r, s] != 0), zero)
        R4 = gen.g4 * quart
        R = [R0, R1, R2, R3, R4]
    else:
        R = [zero] * 5
    E = sum((0.5 * (Rj + Rj.conj().T) for Rj in R), zero)
    G = (H + E).tocsr()
    for m in [H, G] + R:
        m.data[np.abs(m.data) < DROP_TOL] = 0
        m.eliminate_zeros()
    return GeneratorBundle(t, H.tocsr(), [r.tocsr() for r in R], G)


def build_fock_generator(model: ModeModel, u: np.ndarray, N: int, M_trunc: int, *, full: bool = True,
                         cap: int = DIMENSION_CAP) -> GeneratorBundle:
    """Sparse generator at a frozen condensate u on the sectors 0..M_trunc."""
    if M_trunc > N:
        raise ConfigError(f"M_trunc={M_trunc} exceeds N={N}")
    space = FockSpace(model.L, M_trunc, cap=cap)
    u = np.asarray(u, dtype=complex)
    gen = FluctuationGenerator(space, model, N, lambda t: u, full=full)
    return gen.assemble(0.0)


CF4_A1 = (3 - 2 * np.sqrt(3)) / 12
CF4_A2 = (3 + 2 * np.sqrt(3)) / 12
CF4_C1 = 0.5 - np.sqrt(3) / 6
CF4_C2 = 0.5 + np.sqrt(3) / 6


def evolve_fluctuation(phi0: np.ndarray, gen: FluctuationGenerator, t_final: float, dt: float, *,
                       scheme: str = "cf4", tol: float = 1e-12, t0: float = 0.0,
                       observe: Callable[[float, np.ndarray], None] | None = None) -> np.ndarray:
    """Evolves i dphi/dt = G(t) phi on the generator's truncated space.

    ``scheme='cf4'`` is the fourth-order commutator-free Magnus step built from
    two exponentials at the Gauss points; ``scheme='midpoint'`` freezes the
    generator at the step midpoint (second order).
    """
    if len(phi0) != gen.space.dim:
        raise DomainError("initial vector does not live on the generator's space")
    span = t_final - t0
    nsteps = max(1, int(np.ceil(span / dt - 1e-9))) if span > 0 else 0
    phi = np.asarray(phi0, dtype=complex).copy()
    if observe:
        observe(t0, phi)
    if nsteps == 0:
        return phi
    h = span / nsteps
    for k in range(nsteps):
        t = t0 + k * h
        if scheme == "midpoint":
            phi = expm_krylov(gen.matvec(t + 0.5 * h), phi, h, tol=tol / nsteps)
        elif scheme == "cf4":
            c1, c2 = gen.coefficients(t + CF4_C1 * h), gen.coefficients(t + CF4_C2 * h)
            first = c1.combine(c2, CF4_A2, CF4_A1)
            second = c1.combine(c2, CF4_A1, CF4_A2)
            phi = expm_krylov(lambda v: gen.apply(first, v), phi, h, tol=tol / nsteps)
            phi = expm_krylov(lambda v: gen.apply(second, v), phi, h, tol=tol / nsteps)
        else:
            raise ConfigError(f"unknown scheme {scheme!r}")
        if observe:
            observe(t + h, phi)
    return phi


# ---------------------------------------------------------------- observables


def density_matrices(space: FockSpace, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """gamma_pq = <a*_q a_p>, alpha_pq = <a_p a_q>."""
    y1 = space.lower(v)
    gamma = y1.conj() @ y1.T  # [q, p] -> transpose below
    gamma = gamma.T
    y2 = space.lower2(v)
    alpha = np.einsum("b,pqb->pq", v.conj(), y2)
    return gamma, alpha


def fock_expectations(space: FockSpace, v: np.ndarray, observable: str | np.ndarray = "number",
                      ksq: np.ndarray | None = None) -> float:
    """<v, X v> for X = number, dGamma(1 - Delta) (needs the mode energies ``ksq``) or dGamma(A)."""
    if isinstance(observable, str):
        if observable == "number":
            return float(np.sum(space.n * np.abs(v) ** 2))
        if observable in ("kinetic", "dGamma(1-Delta)"):
            if ksq is None:
                raise ConfigError("dGamma(1 - Delta) needs the mode energies")
            diag = space.occ @ (1.0 + np.asarray(ksq))
            return float(np.sum(diag * np.abs(v) ** 2))
        raise ConfigError(f"unknown observable {observable!r}")
    A = np.asarray(observable)
    if A.shape != (space.L, space.L):
        raise ConfigError(f"observable has shape {A.shape}, expected {(space.L, space.L)}")
    gamma, _ = density_matrices(space, v)
    return float(np.real(np.trace(A @ gamma)))


def one_body_rdm(space: FockSpace, psi: np.ndarray) -> np.ndarray:
    """Normalized one-body reduced density matrix of an N-particle vector."""
    if space.n_min > 0:
        wider = FockSpace(space.L, space.n_max, space.n_min - 1, cap=max(DIMENSION_CAP, 2 * space.dim))
        space, psi = wider, space.transfer(psi, wider)
    gamma, _ = density_matrices(space, psi)
    return gamma / np.real(np.trace(gamma))


def sector_record(t: float, space: FockSpace, v: np.ndarray, ksq: np.ndarray) -> str:
    """JSONL line with the sector weights and expectations of an excitation vector."""
    return json.dumps({
        "time": float(t),
        "sector_norms": [float(x) for x in space.sector_norms(v)],
        "number_expectation": fock_expectations(space, v, "number"),
        "kinetic_expectation": fock_expectations(space, v, "kinetic", ksq),
    }, sort_keys=True)
