from planehead.backbone.generator import (
    TriPlane,
    init_generator,
    mapping,
    normalize_triplane,
    plane_stats,
    synthesize_triplane,
)
from planehead.backbone.decoders import (
    K_BASE,
    decode_appearance,
    decode_geometry,
    init_decoders,
)
from planehead.backbone.render import (
    RenderOutput,
    extract_mask,
    render,
    render_core,
    sample_features,
)
from planehead.backbone.checkpoint import (
    load_params,
    params_checksum,
    save_params,
    to_tensors,
)
from planehead.backbone.pretrain import PretrainConfig, pretrain_stage1, pretrain_stage2

__all__ = [
    "TriPlane", "init_generator", "mapping", "normalize_triplane",
    "plane_stats", "synthesize_triplane",
    "K_BASE", "decode_appearance", "decode_geometry", "init_decoders",
    "RenderOutput", "extract_mask", "render", "render_core", "sample_features",
    "load_params", "params_checksum", "save_params", "to_tensors",
    "PretrainConfig", "pretrain_stage1", "pretrain_stage2",
]
