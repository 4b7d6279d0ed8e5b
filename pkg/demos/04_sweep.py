"""Run a small hyperparameter grid and pick the best configuration.

The sweep trains every grid point under each seed, scores configurations by
mean validation accuracy, and returns the winner. Results are independent of
execution order.
"""

from envgnn.config import TrainConfig
from envgnn.shiftgen import PlantedConfig, gen_planted_dataset
from envgnn.trainer import sweep


def main():
    dataset = gen_planted_dataset(PlantedConfig(n_per_domain=200, seed=1))
    base = TrainConfig(epochs=40, hidden=16, deterministic_eval=True)
    grid = {"reg_weight": [0.5, 1.0], "tau": [1.0, 3.0]}
    best, results = sweep(dataset, grid, seeds=[0, 1], base=base)

    print(f"{len(results)} runs")
    for r in results:
        print(f"  {r['overrides']}  seed {r['seed']}  "
              f"valid {r['best_valid']:.3f}  ood {r['final']['ood_mean']:.3f}")
    print(f"\nbest: reg_weight={best.reg_weight}, tau={best.tau}")


if __name__ == "__main__":
    main()
