"""rforge: learning and exploiting a discriminative model of visual realism
in image composites, at desk scale on synthetic scenes."""

__version__ = "0.1.0"
