"""Regenerate the bundled 39-bus case from public New England data.

Network, loads and dispatch follow MATPOWER ``case39``; machine inertia and
transient reactances follow the classic New England 10-machine table.  An
AC power flow (PV machines, PQ loads, slack at bus 31) fixes the bus voltage
magnitudes used to convert loads to constant impedances and the internal
EMFs behind ``x'd``.

    python tools/build_ne39.py > src/freqctl/data/cases/ne39.toml
"""

import numpy as np
from scipy.optimize import fsolve

BASE = 100.0
INERTIA_SCALE = 0.25  # low-inertia variant: every machine keeps a quarter of its inertia

# from, to, r, x, b, tap   (tap 0 means nominal)
BRANCHES = [
    (1, 2, 0.0035, 0.0411, 0.6987, 0), (1, 39, 0.0010, 0.0250, 0.7500, 0),
    (2, 3, 0.0013, 0.0151, 0.2572, 0), (2, 25, 0.0070, 0.0086, 0.1460, 0),
    (2, 30, 0.0000, 0.0181, 0.0000, 1.025), (3, 4, 0.0013, 0.0213, 0.2214, 0),
    (3, 18, 0.0011, 0.0133, 0.2138, 0), (4, 5, 0.0008, 0.0128, 0.1342, 0),
    (4, 14, 0.0008, 0.0129, 0.1382, 0), (5, 6, 0.0002, 0.0026, 0.0434, 0),
    (5, 8, 0.0008, 0.0112, 0.1476, 0), (6, 7, 0.0006, 0.0092, 0.1130, 0),
    (6, 11, 0.0007, 0.0082, 0.1389, 0), (6, 31, 0.0000, 0.0250, 0.0000, 1.070),
    (7, 8, 0.0004, 0.0046, 0.0780, 0), (8, 9, 0.0023, 0.0363, 0.3804, 0),
    (9, 39, 0.0010, 0.0250, 1.2000, 0), (10, 11, 0.0004, 0.0043, 0.0729, 0),
    (10, 13, 0.0004, 0.0043, 0.0729, 0), (10, 32, 0.0000, 0.0200, 0.0000, 1.070),
    (12, 11, 0.0016, 0.0435, 0.0000, 1.006), (12, 13, 0.0016, 0.0435, 0.0000, 1.006),
    (13, 14, 0.0009, 0.0101, 0.1723, 0), (14, 15, 0.0018, 0.0217, 0.3660, 0),
    (15, 16, 0.0009, 0.0094, 0.1710, 0), (16, 17, 0.0007, 0.0089, 0.1342, 0),
    (16, 19, 0.0016, 0.0195, 0.3040, 0), (16, 21, 0.0008, 0.0135, 0.2548, 0),
    (16, 24, 0.0003, 0.0059, 0.0680, 0), (17, 18, 0.0007, 0.0082, 0.1319, 0),
    (17, 27, 0.0013, 0.0173, 0.3216, 0), (19, 20, 0.0007, 0.0138, 0.0000, 1.060),
    (19, 33, 0.0007, 0.0142, 0.0000, 1.070), (20, 34, 0.0009, 0.0180, 0.0000, 1.009),
    (21, 22, 0.0008, 0.0140, 0.2565, 0), (22, 23, 0.0006, 0.0096, 0.1846, 0),
    (22, 35, 0.0000, 0.0143, 0.0000, 1.025), (23, 24, 0.0022, 0.0350, 0.3610, 0),
    (23, 36, 0.0005, 0.0272, 0.0000, 0), (25, 26, 0.0032, 0.0323, 0.5130, 0),
    (25, 37, 0.0006, 0.0232, 0.0000, 1.025), (26, 27, 0.0014, 0.0147, 0.2396, 0),
    (26, 28, 0.0043, 0.0474, 0.7802, 0), (26, 29, 0.0057, 0.0625, 1.0290, 0),
    (28, 29, 0.0014, 0.0151, 0.2490, 0), (29, 38, 0.0008, 0.0156, 0.0000, 1.025),
]
LOADS = {  # bus: (MW, Mvar)
    3: (322.0, 2.4), 4: (500.0, 184.0), 7: (233.8, 84.0), 8: (522.0, 176.6), 12: (7.5, 88.0),
    15: (320.0, 153.0), 16: (329.0, 32.3), 18: (158.0, 30.0), 20: (628.0, 103.0),
    21: (274.0, 115.0), 23: (247.5, 84.6), 24: (308.6, -92.2), 25: (224.0, 47.2),
    26: (139.0, 17.0), 27: (281.0, 75.5), 28: (206.0, 27.6), 29: (283.5, 26.9),
    31: (9.2, 4.6), 39: (1104.0, 250.0),
}
# bus: (MW, Vset, H [s, 100 MVA], x'd)
MACHINES = {
    30: (250.0, 1.0499, 21.0, 0.0310), 31: (None, 0.9820, 15.15, 0.0697),
    32: (650.0, 0.9841, 17.9, 0.0531), 33: (632.0, 0.9972, 14.3, 0.0436),
    34: (508.0, 1.0123, 13.0, 0.1320), 35: (650.0, 1.0494, 17.4, 0.0500),
    36: (560.0, 1.0636, 13.2, 0.0490), 37: (540.0, 1.0275, 12.15, 0.0570),
    38: (830.0, 1.0265, 17.25, 0.0570), 39: (1000.0, 1.0300, 250.0, 0.0060),
}
IBRS = [("S16", 16), ("S26", 26)]
SLACK = 31


def ybus():
    Y = np.zeros((39, 39), dtype=complex)
    for f, t, r, x, b, tap in BRANCHES:
        f, t = f - 1, t - 1
        a = tap or 1.0
        y = 1.0 / complex(r, x)
        Y[f, f] += (y + 0.5j * b) / a**2
        Y[t, t] += y + 0.5j * b
        Y[f, t] -= y / a
        Y[t, f] -= y / a
    return Y


def power_flow(Y):
    pq = [i for i in range(39) if i + 1 not in MACHINES]
    va_idx = [i for i in range(39) if i != SLACK - 1]
    p_sched = np.zeros(39)
    q_sched = np.zeros(39)
    for bus, (pd, qd) in LOADS.items():
        p_sched[bus - 1] -= pd / BASE
        q_sched[bus - 1] -= qd / BASE
    vm0 = np.ones(39)
    for bus, (pg, vset, _, _) in MACHINES.items():
        vm0[bus - 1] = vset
        if pg is not None:
            p_sched[bus - 1] += pg / BASE

    def unpack(z):
        va = np.zeros(39)
        vm = vm0.copy()
        va[va_idx] = z[:len(va_idx)]
        vm[pq] = z[len(va_idx):]
        return va, vm

    def mismatch(z):
        va, vm = unpack(z)
        V = vm * np.exp(1j * va)
        S = V * np.conj(Y @ V)
        return np.concatenate([(S.real - p_sched)[va_idx], (S.imag - q_sched)[pq]])

    z = fsolve(mismatch, np.concatenate([np.zeros(len(va_idx)), np.ones(len(pq))]), xtol=1e-13)
    assert np.abs(mismatch(z)).max() < 1e-9
    va, vm = unpack(z)
    V = vm * np.exp(1j * va)
    S = V * np.conj(Y @ V)
    return V, S


def main():
    Y = ybus()
    V, S = power_flow(Y)
    out = []
    w = out.append
    w("# New England 39-bus system, low-inertia variant with two storage IBRs.")
    w("#")
    w("# Provenance: branch, load and dispatch data from MATPOWER case39; machine")
    w("# inertia H and transient reactance x'd from the classic New England")
    w("# 10-machine table (100 MVA base).  Generated by tools/build_ne39.py:")
    w("#  - bus voltage magnitudes come from an AC power flow of the full case")
    w("#    (slack bus 31), and loads are converted to constant impedances there;")
    w("#  - machine EMFs are |V + j x'd I| at that operating point;")
    w(f"#  - inertia m = 2H scaled by {INERTIA_SCALE} to mimic high IBR penetration;")
    w("#  - damping d = 1 p.u. per machine, droop 5 % on a rating of 1.1 x dispatch,")
    w("#    governor lag 2 s;")
    w("#  - storage IBRs at buses 16 and 26 idle at zero output behind x = 0.05.")
    w("")
    w("[case]")
    w('name = "ne39"')
    w("base_mva = 100.0")
    w("frequency = 60.0")
    w('description = "39-bus New England, 10 machines, 2 storage IBRs, inertia x0.25"')
    w("")
    w("[agc]")
    w("gain = 0.0")
    for i in range(39):
        bus = i + 1
        w("")
        w("[[bus]]")
        w(f"id = {bus}")
        w(f"vm = {abs(V[i]):.10f}")
        if bus in LOADS:
            pd, qd = LOADS[bus]
            w(f"pd = {pd / BASE:.6f}")
            w(f"qd = {qd / BASE:.6f}")
    for f, t, r, x, b, tap in BRANCHES:
        w("")
        w("[[branch]]")
        w(f"from = {f}")
        w(f"to = {t}")
        w(f"r = {r}")
        w(f"x = {x}")
        if b:
            w(f"b = {b}")
        if tap:
            w(f"tap = {tap}")
    for k, (bus, (_, _, H, xd)) in enumerate(MACHINES.items()):
        i = bus - 1
        pd, qd = LOADS.get(bus, (0.0, 0.0))
        s_gen = S[i] + complex(pd, qd) / BASE
        current = np.conj(s_gen / V[i])
        emf = abs(V[i] + 1j * xd * current)
        pg = s_gen.real
        w("")
        w("[[machine]]")
        w(f'name = "G{bus}"')
        w(f"bus = {bus}")
        w(f"xd = {xd}")
        w(f"emf = {emf:.10f}")
        w(f"p = {pg:.10f}")
        w(f"m = {2 * H * INERTIA_SCALE:.6g}")
        w("d = 1.0")
        w(f"droop = {0.05 / (1.1 * pg):.6g}")
        w("tau_g = 2.0")
        if bus == SLACK:
            w("slack = true")
    for name, bus in IBRS:
        w("")
        w("[[ibr]]")
        w(f'name = "{name}"')
        w(f"bus = {bus}")
        w("x = 0.05")
        w(f"emf = {abs(V[bus - 1]):.10f}")
        w("p = 0.0")
    print("\n".join(out))


if __name__ == "__main__":
    main()
