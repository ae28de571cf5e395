from .dataset import AnnotatedSample, FewShotDataset
from .filtering import DatasetStats, compute_stats, filter_dataset
from .manifest import ManifestError, RawDataset, load_annotations, parse_manifest, save_manifest
from .rasterize import rasterize
from .synthetic import SceneSpec, generate_corpus, generate_synthetic_scene

__all__ = [
    "AnnotatedSample",
    "DatasetStats",
    "FewShotDataset",
    "ManifestError",
    "RawDataset",
    "SceneSpec",
    "compute_stats",
    "filter_dataset",
    "generate_corpus",
    "generate_synthetic_scene",
    "load_annotations",
    "parse_manifest",
    "rasterize",
    "save_manifest",
]
