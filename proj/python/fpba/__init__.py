"""Python bindings for the fpba toolkit.

Arrays are float64 NCHW with values in [0, 1]; labels are 0 for real and 1 for
generated images. Config arguments are dicts with the same keys as the CLI's
persisted run_config.json sections.
"""

from ._core import (
    BayesEnsemble,
    CapabilityError,
    Detector,
    DivergenceError,
    Error,
    FormatError,
    InvalidDataset,
    InvalidInput,
    InvalidParameter,
    IoError,
    PreconditionError,
    attack,
    cli,
    dct2,
    default_attack_config,
    default_post_train_config,
    gradient_diagnostic,
    idct2,
    image_quality,
    load_dataset,
    spectrum_saliency,
    spectrum_transform,
    synth_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]


def main() -> None:
    import sys

    raise SystemExit(cli(sys.argv[1:]))
