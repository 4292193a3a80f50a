"""Monte Carlo sweep of CUPED variance reduction and the ANCOVA comparators.

For each pre/post correlation, simulate replicated experiments and compare the
across-replication variance of the adjusted estimate with the naive one, next
to the 1 - rho^2 prediction. Then show how ANCOVA1/ANCOVA2 track CUPED as the
treatment share moves away from one half.

    python scripts/variance_reduction_sweep.py --reps 200 --n-units 20000
"""

import argparse

import numpy as np

from augment_vr import MetricSpec, SimScenario, ancova_estimate, cuped_estimate, gen_experiment

Y, X = MetricSpec.mean("y"), MetricSpec.mean("x_pre")


def sweep_rho(rhos, reps, n_units, seed0):
    print(f"{'rho':>5} {'1-rho^2':>8} {'plug-in':>8} {'empirical':>9}")
    for rho in rhos:
        naive, adj, plug = [], [], []
        for r in range(reps):
            d = gen_experiment(SimScenario(n_units=n_units, rho_pre=rho, seed=seed0 + r))
            res = cuped_estimate(d, Y, [X])
            naive.append(res.naive.estimate)
            adj.append(res.delta.estimate)
            plug.append(res.variance_reduction_factor)
        emp = np.var(adj, ddof=1) / np.var(naive, ddof=1)
        print(f"{rho:5.2f} {1 - rho**2:8.4f} {np.mean(plug):8.4f} {emp:9.4f}")


def sweep_share(shares, reps, n_units, seed0, slope):
    print(f"\n{'p':>5} {'|a1-cuped|/se':>14} {'|a2-cuped|/se':>14}")
    for p in shares:
        g1, g2 = [], []
        for r in range(reps):
            d = gen_experiment(
                SimScenario(n_units=n_units, p_treatment=p, rho_pre=0.6, treatment_slope=slope, seed=seed0 + r)
            )
            c = cuped_estimate(d, Y, [X])
            se = c.naive.se
            g1.append(abs(ancova_estimate(d, "y", "x_pre", 1).estimate - c.delta.estimate) / se)
            g2.append(abs(ancova_estimate(d, "y", "x_pre", 2).estimate - c.delta.estimate) / se)
        print(f"{p:5.2f} {np.median(g1):14.2e} {np.median(g2):14.2e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--n-units", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--treatment-slope", type=float, default=1.0)
    args = ap.parse_args()
    sweep_rho([0.0, 0.3, 0.5, 0.7, 0.8, 0.9], args.reps, args.n_units, args.seed)
    sweep_share([0.1, 0.3, 0.5, 0.7], max(args.reps // 4, 10), args.n_units, args.seed, args.treatment_slope)


if __name__ == "__main__":
    main()
