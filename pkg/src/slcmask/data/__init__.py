from .augment import AugmentPolicy, Augmented, augment, rotate
from .corpus import CorpusError, Sample, make_corpus, read_corpus, write_corpus
from .stats import DatasetStats, dataset_stats
from .synth import Scene, SceneSpec, adjacent, dilate, synth_scene

__all__ = [name for name in dir() if not name.startswith("_")]
