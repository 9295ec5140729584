"""Report figures rendered off-screen with reproducible PNG bytes."""

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .formats import write_atomic  # noqa: E402

_STYLE = {"figure.dpi": 100, "font.size": 9, "axes.grid": True, "grid.alpha": 0.3,
          "savefig.dpi": 100, "path.simplify": False}


def save(fig, path):
    """PNG without software/time metadata, written atomically."""
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    write_atomic(path, buf.getvalue())


def _grid(n):
    cols = min(n, 5)
    rows = int(np.ceil(n / cols))
    return rows, cols


def g2_panels(results, pair, path, zoom_ns=300.0):
    """One panel per power: normalized histogram (rebinned for display) and fitted curve."""
    ok = [r for r in results if r.error is None]
    if not ok:
        return
    with plt.rc_context(_STYLE):
        rows, cols = _grid(len(ok))
        fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.1 * rows), sharey=True,
                                 squeeze=False)
        for ax in axes.flat[len(ok):]:
            ax.set_visible(False)
        for ax, r in zip(axes.flat, ok):
            h, f = r.histograms[pair], r.fits[pair]
            t = h.taus
            k = 8
            n = (t.size // k) * k
            tb = t[:n].reshape(-1, k).mean(axis=1) * 1e9
            gb = h.g2[:n].reshape(-1, k).mean(axis=1)
            ax.plot(tb, gb, ".", ms=2, color="0.45")
            tt = np.linspace(-zoom_ns, zoom_ns, 801) * 1e-9
            ax.plot(tt * 1e9, f.scale * f.curve(tt), color="C3", lw=1)
            ax.set_xlim(-zoom_ns, zoom_ns)
            ax.set_title(f"{r.power:g} mW, g2(0)={f.g2_zero:.2f}", fontsize=8)
        for ax in axes[-1]:
            ax.set_xlabel("delay (ns)")
        for ax in axes[:, 0]:
            ax.set_ylabel("g2")
        fig.tight_layout()
        save(fig, path)


def saturation(result, rates, path):
    """Count rate against power with both saturation fits; ``rates`` maps pair -> (P, R, sigma)."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        pmax = max(max(v[0]) for v in rates.values())
        pp = np.linspace(0, 1.05 * pmax, 300)
        for color, (name, fit) in zip(("C0", "C1"),
                                      (("confocal", result.confocal), ("fiber", result.fiber))):
            p, r, s = rates[name]
            ax.errorbar(p, r * 1e-3, s * 1e-3, fmt="o", ms=3, color=color, label=name)
            if fit is not None:
                ax.plot(pp, fit.curve(pp) * 1e-3, color=color, lw=1)
        ax.set_xlabel("excitation power (mW)")
        ax.set_ylabel("count rate (kcts/s)")
        ax.legend(frameon=False)
        fig.tight_layout()
        save(fig, path)


def lifetime(result, path):
    """1/tau1 against power with the straight-line extrapolation to zero power."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        pmax = 0.0
        for color, name in zip(("C0", "C1"), ("confocal", "fiber")):
            pts = [(r.power, r.fits[name].tau1, r.fits[name].sigmas["tau1"])
                   for r in result.results if r.error is None]
            if not pts:
                continue
            p, t, s = (np.array(x) for x in zip(*pts))
            pmax = max(pmax, p.max())
            ax.errorbar(p, 1e-6 / t, 1e-6 * s / t**2, fmt="o", ms=3, color=color, label=name)
        lt = result.lifetime
        if lt is not None:
            pp = np.linspace(0, 1.05 * pmax, 2)
            ax.plot(pp, 1e-6 * (lt.intercept + lt.slope * pp), color="k", lw=1,
                    label=f"tau_tot = {lt.tau_tot * 1e9:.0f} +- {lt.sigma * 1e9:.0f} ns")
        ax.set_xlabel("excitation power (mW)")
        ax.set_ylabel("1/tau1 (1/us)")
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        save(fig, path)


def mode_profile(profile, radius_nm, path):
    """Radial |E|^2 along and across the polarization axis."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        r = profile[:, 0]
        ax.plot(r, profile[:, 4], label="along polarization")
        ax.plot(r, profile[:, 5], label="across polarization")
        ax.axvline(radius_nm, color="0.5", ls="--", lw=1)
        ax.set_xlabel("r (nm)")
        ax.set_ylabel("|E|^2 (normalized)")
        ax.legend(frameon=False)
        fig.tight_layout()
        save(fig, path)


def orientation_sweep(sweep, distance_sweep, path):
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
        s = np.asarray(sweep)
        a1.plot(s[:, 0], 100 * s[:, 1], label="radial -> axial")
        a1.plot(s[:, 0], 100 * s[:, 2], label="radial -> tangential")
        a1.set_xlabel("dipole angle from radial (deg)")
        a1.set_ylabel("beta (%)")
        a1.legend(frameon=False)
        d = np.asarray(distance_sweep)
        for i, name in enumerate(("radial", "tangential", "parallel"), start=1):
            a2.plot(d[:, 0], 100 * d[:, i], "o-", ms=3, label=name)
        a2.set_xlabel("distance from surface (nm)")
        a2.set_ylabel("beta (%)")
        a2.legend(frameon=False)
        fig.tight_layout()
        save(fig, path)
