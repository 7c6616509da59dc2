"""Triple-path attentive recurrent network for multichannel speech enhancement.

Thin python surface over the C++ core: model construction and inference,
signal framing, the training losses, SI-SDR, and the room spatializer.
"""

try:
    from ._tparn import *  # noqa: F401,F403  (wheel layout)
    from ._tparn import __doc__ as _core_doc  # noqa: F401
except ImportError:  # in-tree build: module sits next to the package on sys.path
    from _tparn import *  # noqa: F401,F403

__all__ = [
    "Config",
    "Model",
    "frame_signal",
    "overlap_add_frames",
    "stft",
    "sm_loss",
    "pcm_loss",
    "mse_loss",
    "si_sdr",
    "image_source_rir",
    "t60_to_beta",
    "make_mixture",
]
