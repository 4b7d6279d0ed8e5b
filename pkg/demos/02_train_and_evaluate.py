"""Train the mixture-of-branches model and a plain baseline on shifted data.

The mixture model infers a per-node, per-layer branch assignment from the
current embeddings and gates parallel propagation branches with it; a KL term
keeps the inferred assignment from collapsing. The baseline is a standard GCN
trained by empirical risk minimization. On data with a planted spurious shift
the two models score similarly in distribution but diverge out of
distribution.
"""

from envgnn.config import TrainConfig
from envgnn.shiftgen import PlantedConfig, gen_planted_dataset
from envgnn.trainer import train


def main():
    dataset = gen_planted_dataset(PlantedConfig(n_per_domain=500, seed=7,
                                                stable_noise=0.5))
    base = dict(epochs=150, hidden=32, deterministic_eval=True, seed=0)
    arms = {
        "mixture + KL": TrainConfig(method="canet", exact_kl=True, **base),
        "plain GCN":    TrainConfig(method="erm", **base),
    }
    for name, cfg in arms.items():
        res = train(dataset, cfg)
        test_id = next(e["value"] for e in res.final["entries"]
                       if e["split"] == "test_id")
        print(f"{name:14s} best epoch {res.selected_epoch:3d}  "
              f"ID accuracy {test_id:.3f}  OOD accuracy {res.final['ood_mean']:.3f}")


if __name__ == "__main__":
    main()
