"""Synthetic step images, dataset I/O, augmentation, Random Erasing and batch sampling."""
from .augment import AugmentConfig, augment
from .erase import EraseParams, random_erase, sample_rect
from .images import Dataset, LabeledImage, load_dataset, load_png, save_png
from .sampling import QuadrupletBatch, sample_quadruplet_batch
from .synth import generate_dataset, occluded_split, render_dataset, render_step_image, scripted_stream

__all__ = [
    "AugmentConfig", "augment", "EraseParams", "random_erase", "sample_rect", "Dataset",
    "LabeledImage", "load_dataset", "load_png", "save_png", "QuadrupletBatch",
    "sample_quadruplet_batch", "generate_dataset", "occluded_split", "render_dataset",
    "render_step_image", "scripted_stream",
]
