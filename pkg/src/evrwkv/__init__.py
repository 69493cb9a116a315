"""Event-guided low-light image enhancement with bidirectional WKV attention,
built on a small numpy autodiff engine."""

from .config import ConfigError, RunConfig
from .events import EventStream, VoxelGrid, normalize_voxel, parse_events, voxelize, write_events
from .model import EvRWKV
from .pipeline import enhance, load_checkpoint, model_gradcheck, save_checkpoint
from .train import train_toy
from .wkv import WkvParams, bi_wkv, bi_wkv_naive, bi_wkv_scan, re_wkv_2d

__all__ = [
    "ConfigError", "RunConfig", "EventStream", "VoxelGrid", "normalize_voxel", "parse_events", "voxelize",
    "write_events", "EvRWKV", "enhance", "load_checkpoint", "model_gradcheck", "save_checkpoint", "train_toy",
    "WkvParams", "bi_wkv", "bi_wkv_naive", "bi_wkv_scan", "re_wkv_2d",
]
