# %% [markdown]
# # From the network to the condensed QP
#
# The controller works on a linear model of the Kron-reduced network.  This
# walk-through builds it for the toy case and checks each step numerically.

# %%
import numpy as np

from freqctl.harness import load_case
from freqctl.mipc import (
    MipcConfig,
    build_bundle,
    build_linear_model,
    build_power_constraints,
    mipc_step,
    solve_unconstrained,
)
from freqctl.netmodel import dc_partition
from freqctl.plant import solve_equilibrium

case = load_case("toy3")
eq = solve_equilibrium(case.net, case.p_gen, case.p_ibr)
part = dc_partition(case.net, (eq.delta, eq.u))
print("machine block\n", part.B_GG.round(3))
print("machine-IBR block\n", part.B_GI.round(3))

# %% [markdown]
# Linearizing at the operating point, not at flat angles, keeps the loss
# terms of the reduced network to first order.  The discrete model uses
# the same semi-implicit Euler step as the plant.

# %%
h = 0.05
model = build_linear_model(part, case.params, h)
print("state dimension", model.nx, "inputs", model.nu)
print("spectral radius", np.abs(np.linalg.eigvals(model.A)).max())

# %% [markdown]
# Stacking N steps gives y = S u + M x0.  The cost weights speed deviation
# and its rate of change; the condensed Hessian H is what the QP solver sees.

# %%
N = 20
n = model.n
bundle = build_bundle(model.A, model.Bu, model.C, N, np.eye(n), h * np.eye(n), h)
print("H is", bundle.H.shape, "condition number %.3g" % np.linalg.cond(bundle.H))

# %% [markdown]
# Without limits the optimum is a linear solve.  A speed dip (all machines
# 0.01 p.u. slow) makes the controller inject power at the first step:

# %%
x0 = np.concatenate([np.full(n, -0.01), np.zeros(n)])
u = solve_unconstrained(bundle.H, bundle.F, x0)
cfg = MipcConfig(horizon=N, control_period=h, p_min=(-0.5,), p_max=(0.5,))
power, pmap = build_power_constraints(part, bundle.S, bundle.M, cfg)
p = pmap.evaluate(u, x0)
print("first IBR angle move %.4f rad, power %.4f p.u." % (u[0], p[0]))
print("peak planned power %.4f p.u. (limit 0.5)" % p.max())

# %% [markdown]
# The unconstrained plan overshoots the rating.  With the power rows added
# the active-set solver returns a plan that touches the limit instead.

# %%
res = mipc_step(x0, bundle, power)
p_con = pmap.evaluate(res.u, x0)
print("status", res.solution.status, "after", res.solution.iterations, "iterations")
print("peak planned power %.4f p.u., active rows %s" % (p_con.max(), res.solution.active))

# %% [markdown]
# The same matrices are available from the command line:
#
#     freqctl emit-matrices --case toy3 --horizon 20 --out runs/matrices
