"""
abdoshape - spectral (ShapeDNA/AbdomenPrint) and point-cloud (MSPNet) shape
representations of abdominal organs, with the classification protocol built on top
"""

__version__ = "0.1.0"
