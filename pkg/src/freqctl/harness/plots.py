"""Static SVG plots of a run (needs the optional ``matplotlib`` dependency)."""

from __future__ import annotations

from pathlib import Path


def plot_run(result, out_dir) -> list[Path]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError("plots need matplotlib: pip install 'freqctl[plots]'") from exc

    traj, case = result.trajectory, result.case
    panels = [
        ("omega", "speed deviation (p.u.)", traj.omega, case.machine_names),
        ("p_ibr", "IBR power (p.u.)", traj.p_ibr, case.ibr_names),
    ]
    dhat = sorted(k for k in traj.extra if k.startswith("dhat_"))
    if dhat:
        import numpy as np

        panels.append(("dhat", "disturbance estimate (p.u.)",
                       np.column_stack([traj.extra[k] for k in dhat]),
                       [case.machine_names[int(k.split("_")[1])] for k in dhat]))
    written = []
    for name, label, data, legend in panels:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(traj.t, data)
        ax.set_xlabel("time (s)")
        ax.set_ylabel(label)
        ax.set_title(f"{result.spec.name}: {result.spec.controller}")
        if 0 < len(legend) <= 12:
            ax.legend(legend, fontsize=7, ncol=min(len(legend), 5))
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = Path(out_dir) / f"{name}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written
