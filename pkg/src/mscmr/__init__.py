"""LGE cardiac MRI segmentation framework without the CNN.

Cross-modality histogram-match augmentation, slice resize / center crop with
exact inverse, class-frequency weighted cross-entropy, ensemble and
connected-component post-processing, and the Dice / Jaccard / ASSD /
Hausdorff evaluation used by the MS-CMR 2019 challenge.
"""

__version__ = "0.1.0"
