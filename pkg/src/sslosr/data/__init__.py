from sslosr.data.dataset import (
    Dataset,
    concat_datasets,
    conform_shape,
    load_dataset,
    remap_labels,
    scale_pixels,
)
from sslosr.data.split import (
    OpenSetSplit,
    Pool,
    SplitIndex,
    TrackedSplit,
    batch_iter,
    load_split_manifest,
    make_ssl_split,
    save_split_manifest,
    split_from_manifest,
    split_manifest,
)
from sslosr.data.synth import Synth2DSpec, gen_synth2d

__all__ = [
    "Dataset",
    "OpenSetSplit",
    "Pool",
    "SplitIndex",
    "Synth2DSpec",
    "TrackedSplit",
    "batch_iter",
    "concat_datasets",
    "conform_shape",
    "gen_synth2d",
    "load_dataset",
    "load_split_manifest",
    "make_ssl_split",
    "remap_labels",
    "save_split_manifest",
    "scale_pixels",
    "split_from_manifest",
    "split_manifest",
]
