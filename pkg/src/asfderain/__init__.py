"""Video rain-streak removal with temporal alignment, channel shifting and attention fusion."""
from .asfnet import ABLATIONS, ASFNet, NetConfig, build_model
from .datastore import Manifest, ManifestEntry, VideoClip, load_clip, save_clip
from .kernels import BACKEND
from .rainsim import RainConfig, composite, synthesize_rain_video

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "ASFNet",
    "BACKEND",
    "Manifest",
    "ManifestEntry",
    "NetConfig",
    "RainConfig",
    "VideoClip",
    "build_model",
    "composite",
    "load_clip",
    "save_clip",
    "synthesize_rain_video",
]
