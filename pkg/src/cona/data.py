"""Synthetic paired-modality data.

Each pair shares a latent vector: text inputs are one linear view of it,
image inputs another, both plus isotropic Gaussian noise.  The maps are
drawn once per dataset, so matched rows are linearly related and a
retrieval signal exists by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .exceptions import IoError
from .validation import as_matrix

DEFAULT_TEXT_DIM = 24
DEFAULT_IMAGE_DIM = 48


@dataclass
class SyntheticDataset:
    """Paired text/image input rows; row i of each modality is a match."""

    text_inputs: np.ndarray
    image_inputs: np.ndarray
    latent_dim: int
    noise: float
    seed: int
    # Present only on freshly generated datasets; not persisted because the
    # seed regenerates them.
    text_map: np.ndarray | None = None
    image_map: np.ndarray | None = None

    @property
    def num_pairs(self) -> int:
        return self.text_inputs.shape[0]

    def holdout_count(self, frac: float) -> int:
        if not (0.0 <= frac < 1.0):
            raise ValueError(f"holdout fraction must be in [0, 1), got {frac}")
        if frac == 0.0:
            return 0
        return max(1, int(self.num_pairs * frac))

    def split(self, frac: float) -> tuple["SyntheticDataset", "SyntheticDataset"]:
        """(train, holdout) views; the holdout is the last ``frac`` of pairs."""
        n_val = self.holdout_count(frac)
        cut = self.num_pairs - n_val
        train = SyntheticDataset(
            self.text_inputs[:cut], self.image_inputs[:cut], self.latent_dim, self.noise, self.seed
        )
        val = SyntheticDataset(
            self.text_inputs[cut:], self.image_inputs[cut:], self.latent_dim, self.noise, self.seed
        )
        return train, val


def generate_pairs(
    num_pairs: int,
    latent_dim: int = 16,
    noise: float = 0.1,
    seed: int = 0,
    text_dim: int = DEFAULT_TEXT_DIM,
    image_dim: int = DEFAULT_IMAGE_DIM,
    text_map: np.ndarray | None = None,
    image_map: np.ndarray | None = None,
) -> SyntheticDataset:
    """Draw ``num_pairs`` matched text/image input rows.

    With the default random maps each modality sees
    ``latent @ map / sqrt(latent_dim) + noise * eps``; passing explicit
    maps (shape latent_dim x modality_dim) overrides the random ones, which
    is how tests inject identity views.

    The same (num_pairs, dims, noise, seed) always reproduces the same
    arrays bit for bit.
    """
    if num_pairs < 1:
        raise ValueError(f"num_pairs must be >= 1, got {num_pairs}")
    if latent_dim < 1:
        raise ValueError(f"latent_dim must be >= 1, got {latent_dim}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(latent_dim)
    a_text = rng.standard_normal((latent_dim, text_dim)) * scale if text_map is None else as_matrix(text_map)
    a_image = rng.standard_normal((latent_dim, image_dim)) * scale if image_map is None else as_matrix(image_map)
    latents = rng.standard_normal((num_pairs, latent_dim))
    text = latents @ a_text
    image = latents @ a_image
    if noise > 0:
        text = text + noise * rng.standard_normal(text.shape)
        image = image + noise * rng.standard_normal(image.shape)
    return SyntheticDataset(
        text_inputs=text,
        image_inputs=image,
        latent_dim=latent_dim,
        noise=float(noise),
        seed=int(seed),
        text_map=a_text,
        image_map=a_image,
    )


def pair_ids(num_pairs: int, offset: int = 0) -> list[str]:
    """Stable string ids whose lexicographic order matches row order."""
    width = max(6, len(str(offset + num_pairs - 1)))
    return [f"pair-{i:0{width}d}" for i in range(offset, offset + num_pairs)]


def save_dataset(path: str, dataset: SyntheticDataset) -> None:
    header = {
        "kind": "dataset",
        "version": 1,
        "num_pairs": dataset.num_pairs,
        "latent_dim": dataset.latent_dim,
        "text_dim": int(dataset.text_inputs.shape[1]),
        "image_dim": int(dataset.image_inputs.shape[1]),
        "noise": dataset.noise,
        "seed": dataset.seed,
    }
    write_container(
        path,
        header,
        [("text_inputs", dataset.text_inputs), ("image_inputs", dataset.image_inputs)],
    )


def load_dataset(path: str) -> SyntheticDataset:
    header, blocks = read_container(path, expected_kind="dataset")
    try:
        text = blocks["text_inputs"]
        image = blocks["image_inputs"]
    except KeyError as exc:
        raise IoError(f"{path} is missing block {exc}") from exc
    if text.shape[0] != image.shape[0]:
        raise IoError(f"{path}: modality row counts differ, {text.shape[0]} vs {image.shape[0]}")
    if text.shape != (header["num_pairs"], header["text_dim"]):
        raise IoError(f"{path}: text block shape {text.shape} contradicts header")
    if image.shape != (header["num_pairs"], header["image_dim"]):
        raise IoError(f"{path}: image block shape {image.shape} contradicts header")
    return SyntheticDataset(
        text_inputs=text,
        image_inputs=image,
        latent_dim=int(header["latent_dim"]),
        noise=float(header["noise"]),
        seed=int(header["seed"]),
    )
