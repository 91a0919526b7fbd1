import numpy as np
from vlshift import surrogate as S
from vlshift.model import ModelParams
from vlshift.branching import bp_summary
from vlshift.timeshift import fit_gg_params, law_from_fit, tau_quantile

rng = np.random.default_rng(777)
cube = S.DEFAULT_BOUNDS
pts = cube.sample(120, rng)
rows = []
n_pass = 0
for i, (r0, dl, rh) in enumerate(pts):
    p = ModelParams(R0=r0, delta=dl, rho=rh)
    s = bp_summary(p)
    n_sims = max(10_000, int(np.ceil(1500 / (1 - s.q_star))))
    fit = fit_gg_params(p, n_sims, rng)
    law = law_from_fit(p, fit)
    lo, hi = tau_quantile(law, 0.025), tau_quantile(law, 0.975)
    ok = (-7 <= lo) and (hi <= 7)
    n_pass += ok
    rows.append((r0, dl, rh, s.lam, s.q_star, lo, hi, float(ok)))
    if (i + 1) % 20 == 0:
        print(f"{i+1}/120 pass so far: {n_pass}", flush=True)

rows = np.array(rows)
np.save(".devtmp/filter_rows.npy", rows)
print("TOTAL pass:", n_pass, "/120")
bad = rows[rows[:, 7] == 0]
print("failing points (R0, delta, rho, lam, lo, hi):")
for r in bad[:25]:
    print(f"  R0={r[0]:5.2f} d={r[1]:4.2f} rho={r[2]:4.2f} lam={r[3]:5.2f} "
          f"tau95=({r[5]:6.2f},{r[6]:6.2f})")
