"""Global dimensions and defaults, overridable from a JSON file."""

import dataclasses
import json
from dataclasses import dataclass


@dataclass
class Config:
    # latent / style dimensions
    z_geo_dim: int = 16
    z_app_dim: int = 16
    style_layers: int = 14
    style_dim: int = 64
    geo_rows: int = 9  # style rows 1..geo_rows come from the geometry branch

    # tri-plane
    plane_channels: int = 16
    plane_res: int = 64

    # network widths
    synth_channels: int = 24
    mapping_hidden: int = 64
    decoder_hidden: int = 48
    adapter_hidden: int = 64
    adapter_depth: int = 3

    # rendering
    n_ray_samples: int = 48
    image_size: int = 64

    # procedural scene field
    density_scale: float = 30.0  # k: peak density inside surfaces
    sdf_sharpness: float = 20.0  # s: sigmoid steepness per scene unit

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(dataclasses.asdict(self), f, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            raw = json.load(f)
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in known})


DEFAULT = Config()
