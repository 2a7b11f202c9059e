"""Case-control simulation under the liability-threshold model and
moment-based heritability estimation."""

__version__ = "0.1.0"
