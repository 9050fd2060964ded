"""Regenerate the frozen matrix fixtures under tests/fixtures/.

The prediction and cost matrices are rebuilt without the package's
condensation code: ``S`` and ``M`` by simulating unit inputs and unit
initial states step by step, and ``G``, ``F``, ``H`` by evaluating the
stacked objective on basis vectors (polarization of a quadratic form).
Only the susceptance blocks and machine data come from the package.

    python tools/make_fixtures.py
"""

from pathlib import Path

import numpy as np

from freqctl.harness.case import load_case
from freqctl.netmodel import dc_partition
from freqctl.plant import solve_equilibrium
from freqctl.qp import write_matrices

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
H_STEP = 0.05
HORIZON = 2


def model(part, params, h):
    """One semi-implicit Euler step of the linear swing model, entry by entry."""
    n, nu = part.n_gen, part.n_ibr
    wb = params.omega_b
    A = np.zeros((2 * n, 2 * n))
    B = np.zeros((2 * n, nu))
    for i in range(n):
        c = h / params.m[i]
        A[i, i] = 1.0 - c * params.d[i]
        for j in range(n):
            A[i, n + j] -= c * part.B_GG[i, j]
        for k in range(nu):
            B[i, k] = -c * part.B_GI[i, k]
    # angle row uses the updated speed
    A[n:] = np.eye(2 * n)[n:] + h * wb * A[:n]
    B[n:] = h * wb * B[:n]
    return A, B


def trajectory(A, B, x0, u, N):
    xs = [x0]
    for t in range(N):
        xs.append(A @ xs[-1] + B @ u[t])
    return xs


def stacked_cost(A, B, n, x0, u, N, h):
    xs = trajectory(A, B, x0, u, N)
    J = 0.0
    for t in range(1, N + 1):
        w, w_prev = xs[t][:n], xs[t - 1][:n]
        J += w @ w + h * ((w - w_prev) / h) @ ((w - w_prev) / h)
    return 0.5 * J


def main():
    case = load_case("toy3")
    eq = solve_equilibrium(case.net, case.p_gen, case.p_ibr)
    part = dc_partition(case.net, (eq.delta, eq.u))
    n, nu, N, h = part.n_gen, part.n_ibr, HORIZON, H_STEP
    A, B = model(part, case.params, h)
    nx, nU = 2 * n, N * nu

    S = np.zeros(((N + 1) * nx, nU))
    for col in range(nU):
        u = np.zeros((N, nu))
        u.flat[col] = 1.0
        S[:, col] = np.concatenate(trajectory(A, B, np.zeros(nx), u, N))
    M = np.zeros(((N + 1) * nx, nx))
    for col in range(nx):
        x0 = np.zeros(nx)
        x0[col] = 1.0
        M[:, col] = np.concatenate(trajectory(A, B, x0, np.zeros((N, nu)), N))

    def J(x0, u):
        return stacked_cost(A, B, n, x0, u.reshape(N, nu), N, h)

    ex, eu = np.eye(nx), np.eye(nU)
    zx, zu = np.zeros(nx), np.zeros(nU)
    G = np.array([[J(ex[i] + ex[j], zu) - J(ex[i], zu) - J(ex[j], zu) for j in range(nx)] for i in range(nx)])
    H = np.array([[J(zx, eu[i] + eu[j]) - J(zx, eu[i]) - J(zx, eu[j]) for j in range(nU)] for i in range(nU)])
    F = np.array([[J(ex[i], eu[j]) - J(ex[i], zu) - J(zx, eu[j]) for j in range(nU)] for i in range(nx)])
    OUT.mkdir(parents=True, exist_ok=True)
    write_matrices(OUT / "toy3_h0.05_N2.txt", {"A": A, "Bu": B, "S": S, "M": M, "G": G, "F": F, "H": H})


if __name__ == "__main__":
    main()
