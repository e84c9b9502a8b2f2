"""GPS graph transformers on numpy: encodings, autodiff, hybrid layers, training."""

from .autodiff import ParamStore, Value, backward, grad_check
from .encodings import EncodingSet, compute_encodings, lap_pe, rwse, wl_colors
from .graph import Graph, GraphBatch, batch_graphs, gen_csl, gen_decalin, load_graphs
from .model import GPSModel, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "Graph", "GraphBatch", "batch_graphs", "gen_csl", "gen_decalin", "load_graphs",
    "EncodingSet", "compute_encodings", "lap_pe", "rwse", "wl_colors",
    "Value", "ParamStore", "backward", "grad_check",
    "GPSModel", "ModelConfig",
]
