"""Vision-based drone landing on lava flows: fiducial pad pose, terrain safety maps, landing control."""

__version__ = "0.1.0"
