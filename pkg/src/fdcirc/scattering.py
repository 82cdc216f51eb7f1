"""Scattering-matrix optimization: trace reformulation plus two-loop PDD.

The surrogate f_tau is affine-quadratic in Phi:

    f_tau(Phi) = const + 2Re Tr(C1 Phi) - 2Re Tr(C2 Phi) - Tr(A Phi B Phi^H)
                 + 2Re Tr(C3 Phi) - 2Re Tr(C4 Phi) + 2Re Tr(C5 Phi).

With r_k = w_k^H H_ref,k^T (row) and q_i = H_ref,i-1 p_i (column), every
received amplitude is z_ki = s_ki + r_k Phi q_i, where s_ki collects the
direct/SI channel and, when structural scattering is on, the -r_k q_i
specular part. Expanding sum_k alpha_k |tau_k|^2 sum_i |z_ki|^2 gives
A = sum_k alpha_k|tau_k|^2 r_k^H r_k and B = sum_i q_i q_i^H (the quadratic
separates), the direct/SI cross terms C2/C4/C5, and the structural cross
term C3 = B A (zero with structural scattering off). C5 equals C2 and
cancels the i = k+1 entry of C4's full sum. A and the linear coefficients
carry a 1/ln2 factor so the form matches f_tau in bits.

Unitarity is decoupled by a copy Psi_g with dual Lambda_g and penalty
1/(2 rho); the symmetry class is built into the duplication map K_g, so the
phi_g update is an unconstrained linear solve and the Psi_g update is an
orthogonal Procrustes projection (unitary polar factor).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .channel import ChannelSet
from .config import RisArchitecture, ScenarioConfig
from .metrics import BeamformerState
from .surrogate import LN2, SurrogateState

log = logging.getLogger(__name__)

RHO_FLOOR = 1e-12


def _vec(x: np.ndarray) -> np.ndarray:
    """Column-major vectorization (the convention behind A^T (x) B identities)."""
    return x.reshape(-1, order="F")


def _mat(x: np.ndarray, m: int) -> np.ndarray:
    return x.reshape(m, m, order="F")


@dataclass
class ArchitectureMaps:
    """Per-group duplication maps K_g (M_g^2 x L) and placement maps R_g (M^2 x M_g^2).

    K_g reconstructs vec(Phi_g) from the free-parameter vector; for the
    reciprocal class the free parameters are the diagonal-plus-lower entries
    in column-major order and K_g mirrors each strictly-lower entry into its
    upper position. R_g drops vec(Phi_g) into group g's diagonal block of
    vec(Phi).
    """

    duplication: list
    placement: list

    @property
    def num_free(self) -> int:
        return self.duplication[0].shape[1]


def build_maps(arch: RisArchitecture) -> ArchitectureMaps:
    m, mg, groups = arch.elements, arch.group_size, arch.groups
    if arch.reciprocity == "reciprocal":
        ell = mg * (mg + 1) // 2
        k_map = np.zeros((mg * mg, ell))
        idx = 0
        for j in range(mg):
            for i in range(j, mg):
                k_map[i + j * mg, idx] = 1.0
                if i != j:
                    k_map[j + i * mg, idx] = 1.0
                idx += 1
    else:
        k_map = np.eye(mg * mg)
    duplication, placement = [], []
    for g in range(groups):
        off = g * mg
        r_map = np.zeros((m * m, mg * mg))
        for j in range(mg):
            for i in range(mg):
                r_map[(off + i) + (off + j) * m, i + j * mg] = 1.0
        duplication.append(k_map.copy())
        placement.append(r_map)
    return ArchitectureMaps(duplication=duplication, placement=placement)


@dataclass
class RisState:
    """PDD working state: group blocks, unitary copies, duals, penalty."""

    phi_groups: list
    psi_groups: list
    lambda_groups: list
    rho: float

    @property
    def phi(self) -> np.ndarray:
        return blkdiag(self.phi_groups)

    def copy(self) -> "RisState":
        return RisState([p.copy() for p in self.phi_groups],
                        [p.copy() for p in self.psi_groups],
                        [p.copy() for p in self.lambda_groups], self.rho)


def blkdiag(groups: list) -> np.ndarray:
    return scipy.linalg.block_diag(*groups)


def identity_state(arch: RisArchitecture, rho0: float) -> RisState:
    mg = arch.group_size
    eye = [np.eye(mg, dtype=complex) for _ in range(arch.groups)]
    zero = [np.zeros((mg, mg), dtype=complex) for _ in range(arch.groups)]
    return RisState(phi_groups=[e.copy() for e in eye], psi_groups=eye,
                    lambda_groups=zero, rho=rho0)


@dataclass
class TraceFormCoefficients:
    a: np.ndarray
    b: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    c4: np.ndarray
    c5: np.ndarray

    @property
    def net_linear(self) -> np.ndarray:
        """Signed sum of the linear coefficients: C1 - C2 + C3 - C4 + C5."""
        return self.c1 - self.c2 + self.c3 - self.c4 + self.c5


def assemble_trace_form(bf: BeamformerState, sur: SurrogateState, ch: ChannelSet,
                        cfg: ScenarioConfig) -> TraceFormCoefficients:
    """Coefficients of f_tau(Phi), up to a Phi-independent constant.

    A  = (1/ln2) sum_k alpha_k |tau_k|^2 H_ref,k^* w_k w_k^H H_ref,k^T
    B  = sum_i H_ref,i-1 p_i p_i^H H_ref,i-1^H
    C1 = (1/ln2) sum_k alpha_k sqrt(1+iota_k) tau_k^* H_ref,k-1 p_k w_k^H H_ref,k^T
    C2 = (1/ln2) sum_k alpha_k |tau_k|^2 H_ref,k p_{k+1} p_{k+1}^H H_SI,k^H w_k w_k^H H_ref,k^T
    C3 = B A when structural scattering is on, 0 otherwise
    C4 = like C2 but summed over every transmitter i, with the i = k+1 static
         being H_SI,k and the others H_dir[k,i-1]^T
    C5 = C2 (cancels C4's i = k+1 entry, leaving the i != k+1 direct sum)
    """
    cfg.require_validated()
    kk, m, n = ch.h_ref.shape
    eps = 1.0 if cfg.structural_scattering else 0.0
    a = np.zeros((m, m), dtype=complex)
    b = np.zeros((m, m), dtype=complex)
    c1 = np.zeros((m, m), dtype=complex)
    c2 = np.zeros((m, m), dtype=complex)
    c4 = np.zeros((m, m), dtype=complex)
    rows = [bf.combiners[k].conj() @ ch.h_ref[k].T for k in range(kk)]     # r_k
    cols = [ch.h_ref[(i - 1) % kk] @ bf.precoders[i] for i in range(kk)]   # q_i
    for i in range(kk):
        b += np.outer(cols[i], cols[i].conj())
    for k in range(kk):
        wk = cfg.weights[k] / LN2
        t2 = wk * abs(sur.tau[k]) ** 2
        a += t2 * np.outer(rows[k].conj(), rows[k])
        c1 += (wk * np.sqrt(1.0 + sur.iota[k]) * np.conj(sur.tau[k])
               * np.outer(cols[k], rows[k]))
        for i in range(kk):
            if i == (k + 1) % kk:
                static = ch.h_si[k]
            else:
                static = ch.h_dir[k, (i - 1) % kk].T
            d = complex(bf.combiners[k].conj() @ static @ bf.precoders[i])
            term = t2 * np.conj(d) * np.outer(cols[i], rows[k])
            c4 += term
            if i == (k + 1) % kk:
                c2 += term
    c3 = eps * (b @ a)
    return TraceFormCoefficients(a=a, b=b, c1=c1, c2=c2, c3=c3, c4=c4, c5=c2.copy())


def eval_trace_form(coeffs: TraceFormCoefficients, phi: np.ndarray) -> float:
    """f_tau(Phi) minus its Phi-independent constant."""
    lin = 2.0 * np.trace(coeffs.net_linear @ phi).real
    quad = np.trace(coeffs.a @ phi @ coeffs.b @ phi.conj().T).real
    return float(lin - quad)


def _phi_with_group_zeroed(state: RisState, g: int) -> np.ndarray:
    mg = state.phi_groups[0].shape[0]
    full = state.phi
    off = g * mg
    full[off:off + mg, off:off + mg] = 0.0
    return full


def _group_linear_matrix(g: int, coeffs: TraceFormCoefficients,
                         state: RisState) -> np.ndarray:
    """Matrix form of R_g^H (v - Q phi_fixed): block of C_net^H - A Phi_fix B."""
    mg = state.phi_groups[0].shape[0]
    off = g * mg
    phi_fix = _phi_with_group_zeroed(state, g)
    full = coeffs.net_linear.conj().T - coeffs.a @ phi_fix @ coeffs.b
    return full[off:off + mg, off:off + mg]


def assemble_group_subproblem(g: int, coeffs: TraceFormCoefficients,
                              maps: ArchitectureMaps, state: RisState
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic model of the augmented Lagrangian in group g's free parameters.

    Delta = K_g^H (B_g^T (x) A_g) K_g + (1/2 rho) K_g^H K_g
    delta = K_g^H vec(D0_g) + (1/2 rho) K_g^H psi_g - (1/2) K_g^H lambda_g

    with D0_g the matrix form of R_g^H (v - Q phi_fixed): the linear trace
    coefficients plus the coupling to the other groups' (fixed) blocks.
    """
    mg = state.phi_groups[0].shape[0]
    off = g * mg
    k_map = maps.duplication[g]
    a_g = coeffs.a[off:off + mg, off:off + mg]
    b_g = coeffs.b[off:off + mg, off:off + mg]
    q_g = np.kron(b_g.T, a_g)
    inv2rho = 1.0 / (2.0 * state.rho)
    delta_mat = k_map.T @ q_g @ k_map + inv2rho * (k_map.T @ k_map)
    d0 = _vec(_group_linear_matrix(g, coeffs, state))
    rhs = (k_map.T @ d0 + inv2rho * (k_map.T @ _vec(state.psi_groups[g]))
           - 0.5 * (k_map.T @ _vec(state.lambda_groups[g])))
    return delta_mat, rhs


def update_phi_group(g: int, delta_mat: np.ndarray, rhs: np.ndarray,
                     maps: ArchitectureMaps) -> tuple[np.ndarray, np.ndarray]:
    """varphi_g = Delta^-1 delta; Phi_g reconstructed through K_g."""
    try:
        varphi = np.linalg.solve(delta_mat, rhs)
    except np.linalg.LinAlgError:
        ell = delta_mat.shape[0]
        ridge = 1e-12 * np.trace(delta_mat).real / ell
        log.warning("singular Delta in group %d; ridge-regularized solve", g)
        varphi = np.linalg.lstsq(delta_mat + ridge * np.eye(ell), rhs, rcond=None)[0]
    k_map = maps.duplication[g]
    mg = int(np.sqrt(k_map.shape[0]))
    return varphi, _mat(k_map @ varphi, mg)


def polar_unitary(target: np.ndarray) -> np.ndarray:
    """Unitary polar factor U V^H; identity for an exactly zero target."""
    if not np.any(target):
        return np.eye(target.shape[0], dtype=complex)
    u, _, vh = np.linalg.svd(target)
    return u @ vh


def update_psi_group(g: int, state: RisState) -> np.ndarray:
    """Procrustes projection: Psi_g = polar factor of rho Lambda_g + Phi_g."""
    return polar_unitary(state.rho * state.lambda_groups[g] + state.phi_groups[g])


def pdd_outer_update(state: RisState, g: int, eps_hat: float, scale: float) -> str:
    """One outer step for group g: dual ascent if the gap beats eps_hat, else
    penalty tightening rho <- c rho. Returns the branch taken."""
    gap = np.max(np.abs(state.phi_groups[g] - state.psi_groups[g]))
    if gap < eps_hat:
        state.lambda_groups[g] = (state.lambda_groups[g]
                                  + (state.phi_groups[g] - state.psi_groups[g]) / state.rho)
        return "dual"
    state.rho *= scale
    if state.rho < RHO_FLOOR:
        raise RuntimeError("PDD penalty runaway: rho underflowed below 1e-12")
    return "penalty"


def _augmented_lagrangian(coeffs: TraceFormCoefficients, state: RisState,
                          g: int, phi_fix: np.ndarray, off: int) -> float:
    mg = state.phi_groups[g].shape[0]
    full = phi_fix.copy()
    full[off:off + mg, off:off + mg] = state.phi_groups[g]
    resid = state.phi_groups[g] - state.psi_groups[g]
    return float(-eval_trace_form(coeffs, full)
                 + np.linalg.norm(resid) ** 2 / (2.0 * state.rho)
                 + np.trace(state.lambda_groups[g].conj().T @ resid).real)


def _symmetrize_through_map(psi: np.ndarray) -> np.ndarray:
    """Exact symmetry via the duplication map's parameterization."""
    sym = 0.5 * (psi + psi.T)
    out = np.empty_like(sym)
    idx_l = np.tril_indices(sym.shape[0])
    out[idx_l] = sym[idx_l]
    out[idx_l[1], idx_l[0]] = sym[idx_l]
    return out


def _optimize_scalar_group(g: int, coeffs: TraceFormCoefficients, out: "RisState",
                           d0: np.ndarray, sol, off: int, collect_trace: bool,
                           trace_rows: list) -> bool:
    """M_g = 1 PDD in plain python scalars (the Procrustes step is a phase
    projection and the quadratic coefficient A_gg B_gg is a real number).
    Same loop structure as the matrix path, returns the converged flag."""
    q = float((coeffs.a[off, off] * coeffs.b[off, off]).real)
    d0s = complex(d0[0, 0])
    phi_s = complex(out.phi_groups[g][0, 0])
    psi_s = phi_s / abs(phi_s) if phi_s != 0 else 1.0 + 0.0j
    lam_s = 0.0j
    rho = sol.pdd_rho0
    gap_prev = 0.0
    gap = np.inf
    for t_outer in range(sol.pdd_outer_max):
        l_prev = np.inf
        for t_inner in range(sol.pdd_inner_max):
            inv2rho = 0.5 / rho
            phi_s = (d0s + inv2rho * psi_s - 0.5 * lam_s) / (q + inv2rho)
            target = rho * lam_s + phi_s
            psi_s = target / abs(target) if target != 0 else 1.0 + 0.0j
            delta_s = d0s + inv2rho * psi_s - 0.5 * lam_s
            l_val = ((q + inv2rho) * abs(phi_s) ** 2
                     - 2.0 * (delta_s.conjugate() * phi_s).real
                     - (lam_s.conjugate() * psi_s).real)
            if collect_trace:
                trace_rows.append({"group": g, "outer_iter": t_outer,
                                   "inner_iter": t_inner,
                                   "augmented_lagrangian": l_val,
                                   "gap": abs(phi_s - psi_s), "rho": rho})
            if abs(l_prev - l_val) <= sol.pdd_inner_rel_tol * (1.0 + abs(l_val)):
                break
            l_prev = l_val
        gap = abs(phi_s - psi_s)
        if gap <= sol.pdd_eps:
            break
        if gap < max(sol.pdd_eps, 0.7 * gap_prev):
            lam_s += (phi_s - psi_s) / rho
        else:
            rho *= sol.pdd_scale
            if rho < RHO_FLOOR:
                raise RuntimeError("PDD penalty runaway: rho underflowed below 1e-12")
        gap_prev = gap
    converged = gap <= sol.pdd_eps
    if not converged and gap > 1e3 * sol.pdd_eps:
        log.warning("PDD group %d non-converged: gap %.3e", g, gap)
    old_s = complex(out.phi_groups[g][0, 0])
    # Monotone safeguard on the local linear objective (|phi| = 1 for both).
    best = psi_s if (psi_s.conjugate() * d0s).real >= (old_s.conjugate() * d0s).real \
        else old_s
    out.phi_groups[g][0, 0] = best
    out.psi_groups[g][0, 0] = best / abs(best)
    out.lambda_groups[g][0, 0] = lam_s
    out.rho = rho
    return converged


class _GroupSolver:
    """Cached phi_g-update solver for one group, valid while rho is fixed.

    Spectral path (non-reciprocal: K_g = I): eigendecompose A_g and B_g once,
    each solve is two small matrix products. General path: Cholesky of
    Delta = E + (1/2 rho) diag(F), with E = K^H (B_g^T (x) A_g) K cached.
    """

    def __init__(self, g: int, coeffs: TraceFormCoefficients,
                 maps: ArchitectureMaps, mg: int, off: int, reciprocal: bool):
        self.g, self.mg, self.off, self.reciprocal = g, mg, off, reciprocal
        self.k_map = maps.duplication[g]
        a_g = coeffs.a[off:off + mg, off:off + mg]
        b_g = coeffs.b[off:off + mg, off:off + mg]
        if reciprocal:
            q_g = np.kron(b_g.T, a_g)
            self.e = self.k_map.T @ q_g @ self.k_map
            self.f_diag = np.sum(self.k_map, axis=0)   # K^H K is diagonal
            self._cho = None
        else:
            self.lam_a, self.u_a = np.linalg.eigh(0.5 * (a_g + a_g.conj().T))
            self.lam_b, self.u_b = np.linalg.eigh(0.5 * (b_g + b_g.conj().T))
        self._rho = None

    def refresh(self, rho: float):
        if rho == self._rho:
            return
        self._rho = rho
        if self.reciprocal:
            delta_mat = self.e + np.diag(self.f_diag / (2.0 * rho))
            self._cho = scipy.linalg.cho_factor(delta_mat, check_finite=False)

    def solve(self, d0: np.ndarray, psi: np.ndarray, lam: np.ndarray,
              rho: float) -> np.ndarray:
        """Minimize the group quadratic; returns the new Phi_g block."""
        self.refresh(rho)
        inv2rho = 1.0 / (2.0 * rho)
        if self.reciprocal:
            rhs = (self.k_map.T @ _vec(d0 + inv2rho * psi - 0.5 * lam))
            varphi = scipy.linalg.cho_solve(self._cho, rhs, check_finite=False)
            return _mat(self.k_map @ varphi, self.mg)
        dmat = d0 + inv2rho * psi - 0.5 * lam
        dtil = self.u_a.conj().T @ dmat @ self.u_b
        dtil /= np.outer(self.lam_a, self.lam_b) + inv2rho
        return self.u_a @ dtil @ self.u_b.conj().T


def _normalize_coefficients(coeffs: TraceFormCoefficients) -> TraceFormCoefficients:
    """Rescale the objective to unit coefficient magnitude.

    The argmax is invariant under positive scaling of f_tau, but the penalty
    weight 1/(2 rho0) is not: without normalization the channel-power scale
    of the coefficients decides whether the initial penalty dominates the
    data term. Dividing A and the linear coefficients by the largest
    coefficient magnitude makes pdd_rho0 scale-free.
    """
    scale = float(max(np.abs(coeffs.net_linear).max(initial=0.0),
                      np.abs(coeffs.a).max(initial=0.0)
                      * np.abs(coeffs.b).max(initial=0.0)))
    if scale <= 0.0:
        return coeffs
    return dataclasses.replace(coeffs, a=coeffs.a / scale, c1=coeffs.c1 / scale,
                               c2=coeffs.c2 / scale, c3=coeffs.c3 / scale,
                               c4=coeffs.c4 / scale, c5=coeffs.c5 / scale)


def optimize_scattering(bf: BeamformerState, sur: SurrogateState, ch: ChannelSet,
                        cfg: ScenarioConfig, state: RisState,
                        collect_trace: bool = False):
    """Algorithm 2: per-group two-loop PDD with the other groups frozen.

    Returns (new RisState, trace rows, converged flag). Each finalized group
    is the exactly unitary Psi_g (symmetrized through the duplication map in
    reciprocal mode) and is kept only if it does not decrease the trace-form
    objective (monotone safeguard).
    """
    cfg.require_validated()
    sol = cfg.solver
    arch = cfg.ris
    mg, groups = arch.group_size, arch.groups
    reciprocal = arch.reciprocity == "reciprocal"
    coeffs = _normalize_coefficients(assemble_trace_form(bf, sur, ch, cfg))
    maps = build_maps(arch)
    out = state.copy()
    trace_rows = []
    all_converged = True

    for g in range(groups):
        off = g * mg
        old_phi_g = out.phi_groups[g].copy()
        out.rho = sol.pdd_rho0
        out.lambda_groups[g] = np.zeros((mg, mg), dtype=complex)
        out.psi_groups[g] = polar_unitary(out.phi_groups[g])
        phi_fix = _phi_with_group_zeroed(out, g)
        d0 = _group_linear_matrix(g, coeffs, out)
        if mg == 1:
            flag = _optimize_scalar_group(g, coeffs, out, d0, sol, off,
                                          collect_trace, trace_rows)
            all_converged = all_converged and flag
            continue
        solver = _GroupSolver(g, coeffs, maps, mg, off, reciprocal)
        gap_prev = 0.0
        gap = np.inf
        for t_outer in range(sol.pdd_outer_max):
            l_prev = np.inf
            for t_inner in range(sol.pdd_inner_max):
                out.phi_groups[g] = solver.solve(d0, out.psi_groups[g],
                                                 out.lambda_groups[g], out.rho)
                out.psi_groups[g] = update_psi_group(g, out)
                l_val = _augmented_lagrangian(coeffs, out, g, phi_fix, off)
                if collect_trace:
                    gap_now = np.max(np.abs(out.phi_groups[g] - out.psi_groups[g]))
                    trace_rows.append({"group": g, "outer_iter": t_outer,
                                       "inner_iter": t_inner,
                                       "augmented_lagrangian": l_val,
                                       "gap": float(gap_now), "rho": out.rho})
                if abs(l_prev - l_val) <= sol.pdd_inner_rel_tol * (1.0 + abs(l_val)):
                    break
                l_prev = l_val
            gap = float(np.max(np.abs(out.phi_groups[g] - out.psi_groups[g])))
            if gap <= sol.pdd_eps:
                break
            eps_hat = max(sol.pdd_eps, 0.7 * gap_prev)
            pdd_outer_update(out, g, eps_hat, sol.pdd_scale)
            gap_prev = gap
        if gap > sol.pdd_eps:
            all_converged = False
            if gap > 1e3 * sol.pdd_eps:
                log.warning("PDD group %d non-converged: gap %.3e", g, gap)
        new_phi_g = out.psi_groups[g]
        if reciprocal:
            new_phi_g = _symmetrize_through_map(new_phi_g)
        # Monotone safeguard: keep the incumbent if the new block is worse.
        base = phi_fix.copy()
        base[off:off + mg, off:off + mg] = new_phi_g
        f_new = eval_trace_form(coeffs, base)
        base[off:off + mg, off:off + mg] = old_phi_g
        f_old = eval_trace_form(coeffs, base)
        if f_new >= f_old:
            out.phi_groups[g] = new_phi_g
        else:
            out.phi_groups[g] = old_phi_g
            out.psi_groups[g] = polar_unitary(old_phi_g)
    return out, trace_rows, all_converged


def random_unitary(rng: np.random.Generator, m: int) -> np.ndarray:
    """Haar-ish random unitary via QR with phase-fixed diagonal."""
    z = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_symmetric_unitary(rng: np.random.Generator, m: int) -> np.ndarray:
    """Random complex symmetric unitary, W = U U^T."""
    u = random_unitary(rng, m)
    return u @ u.T


def random_feasible_phi(rng: np.random.Generator, arch: RisArchitecture) -> np.ndarray:
    """Random Phi respecting connectivity, unitarity, and symmetry class."""
    make = (random_symmetric_unitary if arch.reciprocity == "reciprocal"
            else random_unitary)
    return blkdiag([make(rng, arch.group_size) for _ in range(arch.groups)])
