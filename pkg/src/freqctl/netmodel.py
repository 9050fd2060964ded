"""Kron-reduced network model with AC and DC (linearized) power flows.

Node angles are split into synchronous-machine rotor angles ``delta`` and
IBR angles ``u``.  Both flows use the reduced admittance ``g + jb``; the AC
form keeps the self-conductance terms, the DC form is the Laplacian of the
branch coefficients ``|E_i E_j| b_ij``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, KronReductionError


@dataclass(frozen=True)
class BusSets:
    """Ordered node index sets of the reduced network.

    ``slack`` is a position inside ``generators`` (not a node index).
    """

    generators: tuple[int, ...]
    ibrs: tuple[int, ...]
    slack: int = 0

    def __post_init__(self):
        gens = tuple(int(i) for i in self.generators)
        ibrs = tuple(int(i) for i in self.ibrs)
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "ibrs", ibrs)
        if len(gens) < 1:
            raise ValueError("at least one synchronous machine is required")
        if set(gens) & set(ibrs):
            raise ValueError("generator and IBR sets must be disjoint")
        if len(set(gens)) != len(gens) or len(set(ibrs)) != len(ibrs):
            raise ValueError("duplicate node in bus sets")
        if not 0 <= self.slack < len(gens):
            raise ValueError(f"slack position {self.slack} outside generator set")

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_ibr(self) -> int:
        return len(self.ibrs)

    @property
    def n_nodes(self) -> int:
        return len(self.generators) + len(self.ibrs)


@dataclass(frozen=True, eq=False)
class ReducedNetwork:
    """Reduced admittance ``g + jb`` among generating nodes."""

    g: np.ndarray
    b: np.ndarray
    emf: np.ndarray
    bus_sets: BusSets

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        b = np.array(self.b, dtype=float)
        emf = np.array(self.emf, dtype=float).reshape(-1)
        n = self.bus_sets.n_nodes
        if g.shape != (n, n) or b.shape != (n, n) or emf.shape != (n,):
            raise DimensionError(
                f"network matrices must be {n}x{n} with {n} emf values, got "
                f"g{g.shape}, b{b.shape}, emf{emf.shape}"
            )
        nodes = sorted(self.bus_sets.generators + self.bus_sets.ibrs)
        if nodes != list(range(n)):
            raise ValueError("bus sets must cover every reduced node exactly once")
        scale = max(1.0, np.abs(b).max(), np.abs(g).max())
        if not (np.allclose(g, g.T, atol=1e-10 * scale) and np.allclose(b, b.T, atol=1e-10 * scale)):
            raise ValueError("reduced admittance must be symmetric")
        if np.any(emf <= 0):
            raise ValueError("emf magnitudes must be positive")
        for arr in (g, b, emf):
            arr.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "emf", emf)
        gen_mask = np.zeros(n)
        gen_mask[list(self.bus_sets.generators)] = 1.0
        object.__setattr__(self, "_gen_mask", gen_mask)
        object.__setattr__(self, "_ee", np.outer(emf, emf))

    @property
    def gen_idx(self) -> list[int]:
        return list(self.bus_sets.generators)

    @property
    def ibr_idx(self) -> list[int]:
        return list(self.bus_sets.ibrs)

    @property
    def n_gen(self) -> int:
        return self.bus_sets.n_gen

    @property
    def n_ibr(self) -> int:
        return self.bus_sets.n_ibr

    @property
    def is_lossless(self) -> bool:
        return bool(np.all(self.g == 0.0))

    def angles(self, delta, u) -> np.ndarray:
        """Assemble the full node-angle vector from machine and IBR angles."""
        delta = np.asarray(delta, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        if delta.size != self.bus_sets.n_gen or u.size != self.bus_sets.n_ibr:
            raise DimensionError(
                f"expected {self.n_gen} machine and {self.n_ibr} IBR angles, "
                f"got {delta.shape[0]} and {u.shape[0]}"
            )
        theta = np.empty(self.bus_sets.n_nodes)
        theta[self.gen_idx] = delta
        theta[self.ibr_idx] = u
        return theta


@dataclass(frozen=True, eq=False)
class SusceptancePartition:
    """Blocks of the DC power-flow Laplacian, in machine/IBR order."""

    B_GG: np.ndarray
    B_GI: np.ndarray
    B_IG: np.ndarray
    B_II: np.ndarray

    def __post_init__(self):
        n, m = self.B_GI.shape
        if self.B_GG.shape != (n, n) or self.B_IG.shape != (m, n) or self.B_II.shape != (m, m):
            raise DimensionError("inconsistent susceptance partition blocks")

    @property
    def full(self) -> np.ndarray:
        return np.block([[self.B_GG, self.B_GI], [self.B_IG, self.B_II]])

    @property
    def n_gen(self) -> int:
        return self.B_GG.shape[0]

    @property
    def n_ibr(self) -> int:
        return self.B_II.shape[0]


class MachinePower(NamedTuple):
    to_machines: np.ndarray
    to_ibrs: np.ndarray
    total: np.ndarray


class IbrPower(NamedTuple):
    to_machines: np.ndarray
    to_ibrs: np.ndarray
    total: np.ndarray


def kron_reduce_matrix(ybus, retained) -> np.ndarray:
    """Schur complement ``Y_rr - Y_re Y_ee^-1 Y_er`` of a complex admittance matrix."""
    Y = np.asarray(ybus, dtype=complex)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise DimensionError(f"admittance matrix must be square, got {Y.shape}")
    scale = max(1.0, np.abs(Y).max())
    if not np.allclose(Y, Y.T, atol=1e-10 * scale):
        raise ValueError("admittance matrix must be symmetric")
    n = Y.shape[0]
    keep = [int(i) for i in retained]
    if len(set(keep)) != len(keep) or any(not 0 <= i < n for i in keep):
        raise ValueError("retained indices must be unique and inside the matrix")
    elim = [i for i in range(n) if i not in set(keep)]
    Y_rr = Y[np.ix_(keep, keep)]
    if not elim:
        return Y_rr.copy()
    Y_ee = Y[np.ix_(elim, elim)]
    _, s, vh = np.linalg.svd(Y_ee)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        null = np.abs(vh[-1].conj())
        group = [elim[i] for i in np.flatnonzero(null > 1e-6)]
        raise KronReductionError(
            f"eliminated block is singular; floating bus group {group}", buses=group
        )
    Y_re = Y[np.ix_(keep, elim)]
    Y_er = Y[np.ix_(elim, keep)]
    return Y_rr - Y_re @ np.linalg.solve(Y_ee, Y_er)


def kron_reduce(ybus, retained, *, emf=None, bus_sets: BusSets | None = None) -> ReducedNetwork:
    """Kron-reduce ``ybus`` onto ``retained`` and wrap it as a :class:`ReducedNetwork`.

    Without ``bus_sets`` every retained node is treated as a machine with the
    first one as slack.  ``emf`` defaults to 1.0 p.u.
    """
    Y_red = kron_reduce_matrix(ybus, retained)
    n = Y_red.shape[0]
    if bus_sets is None:
        bus_sets = BusSets(generators=tuple(range(n)), ibrs=(), slack=0)
    if emf is None:
        emf = np.ones(n)
    # symmetrize away round-off from the solve
    Y_red = 0.5 * (Y_red + Y_red.T)
    return ReducedNetwork(g=Y_red.real, b=Y_red.imag, emf=emf, bus_sets=bus_sets)


def _branch_terms(net: ReducedNetwork, theta: np.ndarray, rows=None) -> np.ndarray:
    if rows is None:
        diff = theta[:, None] - theta[None, :]
        return net._ee * (net.g * np.cos(diff) + net.b * np.sin(diff))
    diff = theta[rows, None] - theta[None, :]
    return net._ee[rows] * (net.g[rows] * np.cos(diff) + net.b[rows] * np.sin(diff))


def _split(net: ReducedNetwork, terms: np.ndarray):
    to_g = terms @ net._gen_mask
    total = terms.sum(axis=1)
    return to_g, total - to_g, total


def ac_injections(net: ReducedNetwork, theta) -> np.ndarray:
    """AC active-power injection at every reduced node for node angles ``theta``."""
    theta = np.asarray(theta, dtype=float)
    return _branch_terms(net, theta).sum(axis=1)


def ac_power_machines(net: ReducedNetwork, delta, u) -> MachinePower:
    """Electrical output of each machine, split into flows to machines and to IBRs."""
    terms = _branch_terms(net, net.angles(delta, u), net.gen_idx)
    return MachinePower(*_split(net, terms))


def ac_power_ibrs(net: ReducedNetwork, delta, u) -> IbrPower:
    """Output power of each IBR, split into flows to machines and to other IBRs."""
    terms = _branch_terms(net, net.angles(delta, u), net.ibr_idx)
    return IbrPower(*_split(net, terms))


def ac_jacobian(net: ReducedNetwork, theta) -> np.ndarray:
    """Jacobian of :func:`ac_injections` with respect to the node angles."""
    theta = np.asarray(theta, dtype=float)
    diff = theta[:, None] - theta[None, :]
    J = net._ee * (net.g * np.sin(diff) - net.b * np.cos(diff))
    np.fill_diagonal(J, 0.0)
    np.fill_diagonal(J, -J.sum(axis=1))
    return J


def dc_partition(net: ReducedNetwork, operating_point=None) -> SusceptancePartition:
    """Partition the DC power-flow matrix into machine/IBR blocks.

    With ``operating_point=None`` this is the classic DC Laplacian: off-diagonal
    entries ``-|E_i E_j| b_ij`` and diagonal equal to the negated off-diagonal
    row sum.  Passing ``(delta, u)`` linearizes about that operating point
    instead; the blocks are then the AC Jacobian, which keeps zero row sums but
    is only symmetric for lossless networks.
    """
    n = net.bus_sets.n_nodes
    if operating_point is None:
        theta = np.zeros(n)
    else:
        theta = net.angles(*operating_point)
    L = ac_jacobian(net, theta)
    gi, ii = net.gen_idx, net.ibr_idx
    return SusceptancePartition(
        B_GG=L[np.ix_(gi, gi)],
        B_GI=L[np.ix_(gi, ii)],
        B_IG=L[np.ix_(ii, gi)],
        B_II=L[np.ix_(ii, ii)],
    )


def _check_dims(part: SusceptancePartition, d_delta, u):
    d_delta = np.asarray(d_delta, dtype=float)
    u = np.asarray(u, dtype=float)
    if d_delta.shape[0] != part.n_gen or u.shape[0] != part.n_ibr:
        raise DimensionError(
            f"expected {part.n_gen} machine and {part.n_ibr} IBR angle deviations"
        )
    return d_delta, u


def dc_power_ibrs(part: SusceptancePartition, d_delta, u) -> np.ndarray:
    """Linearized IBR output ``B_IG d_delta + B_II u`` (Laplacian sign convention)."""
    d_delta, u = _check_dims(part, d_delta, u)
    return part.B_IG @ d_delta + part.B_II @ u


def dc_power_machines(part: SusceptancePartition, d_delta, u) -> np.ndarray:
    """Linearized machine electrical output ``B_GG d_delta + B_GI u``."""
    d_delta, u = _check_dims(part, d_delta, u)
    return part.B_GG @ d_delta + part.B_GI @ u
