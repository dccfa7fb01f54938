"""segqc: segmentation quality control for brain MRI tissue maps.

Reconstructs MRI slices from GM/WM/CSF segmentations view by view,
aggregates normalized reconstruction differences into a 3D error map,
and classifies segmentation quality with a small 3D CNN.
"""

__version__ = "0.1.0"
