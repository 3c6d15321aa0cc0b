"""Environmental sound classification toolkit."""

from ._core import (
    EsresError,
    FrontEndConfig,
    ManifestEntry,
    Model,
    audit,
    blackman_harris_window,
    decode_wav,
    extract_features,
    lr_schedule,
    parse_manifest,
    resample,
    synth_dataset,
)

__all__ = [
    "EsresError",
    "FrontEndConfig",
    "ManifestEntry",
    "Model",
    "audit",
    "blackman_harris_window",
    "decode_wav",
    "extract_features",
    "lr_schedule",
    "parse_manifest",
    "resample",
    "synth_dataset",
]
