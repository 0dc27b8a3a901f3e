"""Elevation-cue analysis toolkit.

Ingests HRIR measurements, preprocesses them into HRTF magnitude inputs,
classifies elevation sectors with a small 1D CNN, and explains the
classifier through CAM saliency maps, aggregated contours and prototype
spectra.  A planted-cue synthetic generator provides desk-scale ground
truth for the whole loop.
"""

__version__ = "0.1.0"
