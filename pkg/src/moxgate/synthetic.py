"""Synthetic multi-modal classification data with a tunable cross-modal coupling.

Each sample of class ``c`` gets

    x_m = separation * ((1 - dependency) * mu[c, m] + dependency * coupling * E_m R(m * theta_c) u) + noise * eps

where ``u`` is a per-sample Gaussian latent shared by all modalities,
``R(phi)`` rotates every consecutive coordinate pair of ``u`` by ``phi``,
``theta_c = 2 pi c / K`` and ``E_m`` is a fixed random embedding. A rotated
isotropic Gaussian is still isotropic, so the coupling part of any single
modality has the same distribution for every class. The class is carried only
by the relative rotation between modalities, i.e. by bilinear interactions
between pairs of modalities.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import AlignedDataset, LabelTable, SplitSpec, make_splits, standardize

DEFAULT_MODALITIES = ("gene", "methylation", "mirna")


@dataclass
class SyntheticSpec:
    samples_per_class: int = 100
    num_classes: int = 5
    modality_dims: list[int] = field(default_factory=lambda: [64, 64, 32])
    modality_names: list[str] | None = None
    separation: float = 1.0
    dependency: float = 0.0
    noise: float = 1.0
    latent_dim: int = 8
    coupling: float = 2.0
    test_fraction: float = 0.2
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.separation < 0:
            raise ValueError("separation must be >= 0")
        if not 0.0 <= self.dependency <= 1.0:
            raise ValueError("dependency must lie in [0, 1]")
        if self.latent_dim < 2 or self.latent_dim % 2:
            raise ValueError("latent_dim must be an even number >= 2")
        if self.samples_per_class < 3:
            raise ValueError("samples_per_class must be >= 3")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")
        self.modality_dims = [int(d) for d in self.modality_dims]
        if self.modality_names is None:
            base = list(DEFAULT_MODALITIES)
            self.modality_names = base[: len(self.modality_dims)] + [
                f"mod{i}" for i in range(len(base), len(self.modality_dims))
            ]
        if len(self.modality_names) != len(self.modality_dims):
            raise ValueError("modality_names and modality_dims differ in length")

    def to_dict(self) -> dict:
        return asdict(self)


def _rotate_pairs(u: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = np.empty_like(u)
    out[..., 0::2] = c * u[..., 0::2] - s * u[..., 1::2]
    out[..., 1::2] = s * u[..., 0::2] + c * u[..., 1::2]
    return out


def generate_synthetic(spec: SyntheticSpec) -> AlignedDataset:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    k, r = spec.num_classes, spec.latent_dim
    means = [rng.standard_normal((k, dm)) for dm in spec.modality_dims]
    embeds = [rng.standard_normal((r, dm)) / np.sqrt(r) for dm in spec.modality_dims]

    labels = np.repeat(np.arange(k), spec.samples_per_class)
    n = labels.size
    u = rng.standard_normal((n, r))
    arrays = []
    for m, dm in enumerate(spec.modality_dims):
        latent = np.empty_like(u)
        for c in range(k):
            rows = labels == c
            latent[rows] = _rotate_pairs(u[rows], m * 2.0 * np.pi * c / k)
        signal = (1.0 - spec.dependency) * means[m][labels] + spec.dependency * spec.coupling * latent @ embeds[m]
        arrays.append(spec.separation * signal + spec.noise * rng.standard_normal((n, dm)))

    # per class: the first test_fraction of a shuffled order forms the held-out cohort
    cohort = np.full(n, "SYNTH", dtype=object)
    n_test = int(np.floor(spec.test_fraction * spec.samples_per_class + 0.5))
    for c in range(k):
        idx = rng.permutation(np.flatnonzero(labels == c))
        cohort[idx[:n_test]] = "HOLDOUT"
    names = [f"C{c}" for c in range(k)]
    sample_ids = [f"S{i:05d}" for i in range(n)]
    table = LabelTable(sample_ids, cohort.astype(str).tolist(), [names[c] for c in labels], names)
    split = make_splits(table, SplitSpec({"HOLDOUT"}, spec.validation_fraction, spec.seed))
    data = AlignedDataset(list(spec.modality_names), arrays, labels, split, sample_ids, names,
                          table.cohort, [[f"{name}_{j}" for j in range(dm)]
                                         for name, dm in zip(spec.modality_names, spec.modality_dims)])
    return standardize(data)
