# %% [markdown]
# # Estimating an unmodeled load with half the machines reporting
#
# On the 39-bus case only every other machine (G30, G32, ..., G38) sends its
# speed and angle.  A constant 0.1 p.u. load appears at G34.  The
# observer augments the model with a constant disturbance per measured
# machine and runs a steady-state Kalman filter.

# %%
import numpy as np

from freqctl.harness import load_case
from freqctl.mipc import build_bundle, build_linear_model, mipc_step
from freqctl.netmodel import dc_partition
from freqctl.observer import CommMask, DisturbanceObserver
from freqctl.plant import solve_equilibrium

case = load_case("ne39")
eq = solve_equilibrium(case.net, case.p_gen, case.p_ibr)
h = 0.05
model = build_linear_model(dc_partition(case.net, (eq.delta, eq.u)), case.params, h)
mask = CommMask(tuple(i % 2 == 0 for i in range(case.n_gen)))
obs = DisturbanceObserver(model, mask=mask, noise=(1e-3, 1e-3))
print("measured machines:", [case.machine_names[i] for i in mask.measured])
print("error dynamics spectral radius %.4f" % obs.rho)

# %% [markdown]
# Close the loop on the linear plant with the unconstrained predictive
# controller, feeding the disturbance estimate into the prediction.

# %%
aug = obs.aug
n = model.n
C = np.hstack([np.eye(n), np.zeros((n, aug.nz - n))])
bundle = build_bundle(aug.A, aug.B, C, 20, np.eye(n), h * np.eye(n), h)

d_true = np.zeros(n)
d_true[4] = 0.1


def run(seed, steps=2400):
    rng = np.random.default_rng(seed)
    x, u = np.zeros(model.nx), np.zeros(model.nu)
    obs.reset(x)
    est = []
    for _ in range(steps):
        x = model.step(x, u, d_true)
        obs.predict(u)
        obs.update(x + 1e-3 * rng.standard_normal(model.nx))
        est.append(obs.d_hat_full[4])
        u = mipc_step(obs.z, bundle).u0
    return np.array(est), x


est, x = run(0)
print("per-sample mean abs error %.1f%%" % (100 * np.abs(est[400:] - 0.1).mean() / 0.1))
print("final speed deviation, worst machine: %.2e p.u." % np.abs(x[:n]).max())

# %% [markdown]
# Single samples are noisy: the default filter tuning favours tracking speed.
# The estimate is unbiased, though, so a time average after the transient
# converges.  Across seeds the error of the average shrinks roughly like
# one over the square root of the window.

# %%
runs = np.array([run(seed)[0] for seed in range(10)])
for window in (400, 1000, 2000):
    err = 100 * (runs[:, 400:400 + window].mean(axis=1) - 0.1) / 0.1
    print(f"{window * h:4.0f} s average: mean error {err.mean():+.2f}%, spread {err.std():.2f}%, "
          f"worst {np.abs(err).max():.2f}%")
