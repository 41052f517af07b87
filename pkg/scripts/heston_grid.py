"""ELMM verdicts for the Heston variance across dimensions and drift shapes."""

import argparse

from driftgauge.heston import HestonParams, elmm_verdict, heston_measure_change
from driftgauge.verdict import martingale_verdict


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kappa", type=float, default=1.0)
    ap.add_argument("--sigma", type=float, default=0.4)
    args = ap.parse_args()
    drifts = ["0.05", "0.05*x", "x^0.1", "x^0.3", "x^0.5", "x", "x^2"]
    print(f"{'delta':>6} {'mu':>8} {'elmm':>13} {'density':>22} {'condition':>11}")
    for delta in (0.5, 1.0, 1.5, 2.0, 4.0):
        theta = delta * args.sigma ** 2 / (4 * args.kappa)
        for mu in drifts:
            p = HestonParams(args.kappa, theta, args.sigma, mu=mu)
            rep = elmm_verdict(p)
            mart = martingale_verdict(*heston_measure_change(p)).verdict
            cond = rep.condition_integral.cls if rep.condition_integral else "-"
            print(f"{delta:>6g} {mu:>8} {rep.verdict:>13} {mart:>22} {cond:>11}")


if __name__ == "__main__":
    main()
