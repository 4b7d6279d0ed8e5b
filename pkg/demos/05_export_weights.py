"""Train briefly, then export the per-branch propagation matrices to CSV.

Each mixture layer holds one propagation matrix per branch. After training,
the branches have diverged; exporting them lets external tools compare what
each branch learned.
"""

import os
import tempfile

import numpy as np

from envgnn.config import TrainConfig
from envgnn.model import export_branch_weights, import_branch_weights, init_params
from envgnn.rng import Rng, STREAM_INIT
from envgnn.shiftgen import PlantedConfig, gen_planted_dataset
from envgnn.trainer import train


def main():
    dataset = gen_planted_dataset(PlantedConfig(n_per_domain=200, seed=2))
    cfg = TrainConfig(epochs=40, hidden=16, deterministic_eval=True)
    res = train(dataset, cfg)

    params = init_params(cfg, dataset.num_features, dataset.num_classes,
                         Rng(cfg.seed).substream(STREAM_INIT))
    params.load_values(res.best_params)

    out_dir = tempfile.mkdtemp(prefix="branch_weights_")
    paths = export_branch_weights(params, layer=1, out_dir=out_dir)
    print(f"wrote {len(paths)} matrices to {out_dir}")
    for path in paths:
        w = import_branch_weights(path)
        print(f"  {os.path.basename(path)}: shape {w.shape}, "
              f"frobenius norm {np.linalg.norm(w):.3f}")


if __name__ == "__main__":
    main()
