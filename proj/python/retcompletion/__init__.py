"""Pluralistic image completion with a bidirectional retentive network.

Thin wrapper over the C++ extension. The heavy lifting (palette fitting,
retention paradigms, pixel-wise completion) happens in `_retcompletion`.
"""

try:
    # wheel layout: extension installed inside the package
    from ._retcompletion import (
        BiRetNet,
        ModelConfig,
        Palette,
        RetcError,
        __version__,
        bilinear_upscale,
        dequantize,
        downsample,
        fit_kmeans,
        gen_mask,
        quantize,
        retention_chunkwise,
        retention_parallel,
        retention_recurrent,
    )
except ImportError:  # in-tree build: extension sits on PYTHONPATH
    from _retcompletion import (
        BiRetNet,
        ModelConfig,
        Palette,
        RetcError,
        __version__,
        bilinear_upscale,
        dequantize,
        downsample,
        fit_kmeans,
        gen_mask,
        quantize,
        retention_chunkwise,
        retention_parallel,
        retention_recurrent,
    )

__all__ = [
    "BiRetNet",
    "ModelConfig",
    "Palette",
    "RetcError",
    "bilinear_upscale",
    "dequantize",
    "downsample",
    "fit_kmeans",
    "gen_mask",
    "quantize",
    "retention_chunkwise",
    "retention_parallel",
    "retention_recurrent",
    "__version__",
]
