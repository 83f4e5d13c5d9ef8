"""Two-stage zero-shot anomaly segmentation at desk scale.

Stage one produces a rough per-pixel anomaly map by interacting text features
with multi-scale image patch tokens through a trainable cross-modal module.
Stage two turns that map into point and box prompts for a promptable mask
decoder and fuses the returned masks back into the map. Foundation-model
encoders are deterministic mocks behind adapter-ready interfaces.
"""

__version__ = "0.1.0"
