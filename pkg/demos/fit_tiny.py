"""Fit a linear effect-modification model to the bundled four-area panel.

Run with ``python demos/fit_tiny.py``. Prints the fitted hyperparameters,
DIC, a few relative risks at low and high modifier values, their ratio and
the attributable fraction per area.
"""
from pathlib import Path

import numpy as np

from dlnm_lps import ModelSpec, RRQuery, SpatialSpec, fit_dlnm, log_rr, read_adjacency_csv, read_panel_csv, rrr
from dlnm_lps.inference import OVERALL, attributable_fraction

DATA = Path(__file__).parent / "data"


def main():
    panel = read_panel_csv(DATA / "tiny_panel.csv", modifier="z")
    graph = read_adjacency_csv(DATA / "tiny_adjacency.csv", panel.area_ids)
    spec = ModelSpec(modifier="linear", spatial=SpatialSpec("leroux", graph), v_x=5, v_l=4, max_lag=3,
                     day_of_week=True)
    fitted = fit_dlnm(panel, spec)
    res = fitted.result
    print(f"converged={res.converged}  DIC={res.dic:.2f}  p_D={res.p_d:.2f}")
    for name, value in res.hyper.as_dict().items():
        shown = np.round(value, 4) if isinstance(value, list) else value if value is None else f"{value:.4g}"
        print(f"  {name:>16s}  {shown}")

    # overall log relative risk against x0 = 5 at the 10th and 90th modifier percentiles
    z = np.quantile(panel.modifier, [0.1, 0.9])
    surf = log_rr(res, fitted.cb, fitted.modifier_spec, RRQuery(x=(1.0, 3.0, 7.0, 9.0), x0=5.0, z=z, lags="all",
                                                                n_draws=1000, seed=1))
    ov = list(surf.lags).index(OVERALL)
    print("\n   x      z    RR   (95% interval)")
    for a, x in enumerate(surf.x):
        for b, zv in enumerate(surf.z):
            est, lo, hi = np.exp([surf.estimate[a, b, ov], surf.lower[a, b, ov], surf.upper[a, b, ov]])
            print(f"{x:4.1f}  {zv:+.2f}  {est:.3f} ({lo:.3f}, {hi:.3f})")

    ratio = rrr(res, fitted.cb, fitted.modifier_spec, np.array([1.0, 9.0]), 5.0, z[1], z[0], 1000, 1)
    print("\nRR at high z over RR at low z:", np.round(ratio.estimate, 3))

    J, T = panel.counts.shape
    mu = np.zeros((J, T))
    mu[:, fitted.cb.max_lag:] = fitted.fitted_mean()
    af = attributable_fraction(res, panel, fitted.cb, fitted.modifier_spec, 5.0, mu, n_draws=1000, seed=1)
    print("\nattributable fraction relative to x0 = 5")
    for row in af.to_json():
        print(f"  {row['area']:>4s}  {row['AF']:+.4f} ({row['lo']:+.4f}, {row['hi']:+.4f})")


if __name__ == "__main__":
    main()
