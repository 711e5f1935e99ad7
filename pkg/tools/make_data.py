"""Regenerate the bundled example data under src/mixcert/data and configs/."""

from pathlib import Path

import numpy as np

from mixcert.io import write_component_set, write_dataset_csv, write_ppm
from mixcert.models import ComponentSet, MixtureModel, sample_mixture

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "mixcert" / "data"
CONFIGS = ROOT / "configs"


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    tiny_mix = MixtureModel([0.5, 0.5], [[0.0, 0.0], [3.0, 1.0]], [np.eye(2), [[1.0, 0.4], [0.4, 0.5]]])
    write_dataset_csv(sample_mixture(tiny_mix, 40, 7), DATA / "tiny.csv")
    means = [[0.0, 0.0], [3.0, 1.0], [1.5, 0.5], [-1.0, 2.0]]
    covs = [np.eye(2), 0.5 * np.eye(2)]
    tiny_set = ComponentSet([m for m in means for _ in covs], [c for _ in means for c in covs], {"kind": "explicit"})
    write_component_set(tiny_set, DATA / "tiny_models.json")

    medium_mix = MixtureModel(
        [0.3, 0.3, 0.4],
        [[3.0, 3.5], [5.0, 4.5], [4.0, 6.0]],
        [[[1.2, 0.6], [0.6, 1.2]], [[1.0, 0.0], [0.0, 0.3]], [[1.5, -0.5], [-0.5, 1.5]]],
    )
    write_dataset_csv(sample_mixture(medium_mix, 400, 11), DATA / "medium.csv")

    img = np.zeros((48, 64, 3), np.uint8)
    img[:, :28] = (200, 40, 40)
    img[:, 28:] = (30, 60, 210)
    write_ppm(img, CONFIGS / "two_regions.ppm")


if __name__ == "__main__":
    main()
