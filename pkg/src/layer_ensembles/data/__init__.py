from .io import load_dataset, read_pgm, read_tensor, save_dataset, write_pgm, write_tensor
from .synthetic import SPLITS, Dataset, DatasetSpec, Sample, generate, make_sample
from .transforms import (
    GeometricAug,
    augment,
    convolve_reflect,
    corrupt_gaussian,
    corrupt_random_convolution,
    normalize,
    random_geometric,
    random_kernel,
    swap_patches,
)

__all__ = [
    "SPLITS",
    "Dataset",
    "DatasetSpec",
    "GeometricAug",
    "Sample",
    "augment",
    "convolve_reflect",
    "corrupt_gaussian",
    "corrupt_random_convolution",
    "generate",
    "load_dataset",
    "make_sample",
    "normalize",
    "random_geometric",
    "random_kernel",
    "read_pgm",
    "read_tensor",
    "save_dataset",
    "swap_patches",
    "write_pgm",
    "write_tensor",
]
