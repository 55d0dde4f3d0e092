"""Variance of the grouped shape estimate against the cluster-wise one.

With ``J`` clusters sharing one shape the grouped estimate's variance should be
about ``1 / J`` of the cluster-wise variance.
"""
import argparse

import numpy as np

from gpdfuse.simulate import BlockSpec, ScenarioConfig, clusterwise_procedure, evaluate, oracle_procedure


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--clusters", type=int, default=5)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--gamma", type=float, default=0.2)
    ap.add_argument("--reps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    J = args.clusters
    cfg = ScenarioConfig(n=args.n, J=J, rho=0.0, blocks=BlockSpec(J, 1, args.gamma, 0.0), seed=args.seed)
    rep = evaluate(args.reps, cfg, {"clusterwise": clusterwise_procedure,
                                    "oracle": oracle_procedure([list(range(J))])})
    print(f"MSE ratio per cluster: {np.round(rep.mse_ratio, 3).tolist()} (target {1 / J:.3f})")
    print(f"interval length ratio: {rep.length_ratio.mean():.3f}")


if __name__ == "__main__":
    main()
