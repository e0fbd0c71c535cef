"""Metric-depth curation and novel-view conditioning for multi-camera driving data.

Poses are camera-to-world (``T_wc``), cameras look down +z with image u to the
right and v down, pixel centers sit on integer coordinates, and every depth
raster holds camera-frame z in meters (never ray length).
"""

__version__ = "0.1.0"
