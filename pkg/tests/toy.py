"""Small model and corpus settings shared by the slower tests."""

from slcmask.data import SceneSpec, make_corpus
from slcmask.geometry import AnchorSet
from slcmask.pipeline import PipelineConfig


def tiny_config(**kw):
    base = dict(
        backbone_channels=(4, 8, 8, 8),
        backbone_strides=(1, 2, 2, 2),
        pyramid_stages=(3, 4),
        fpn_channels=8,
        anchors=AnchorSet(strides=(4, 8), base_scales=(12, 24)),
        rpn_pre_nms=200,
        train_rois=100,
        infer_rois=100,
        rpn_anchors_per_image=32,
        rois_per_image=16,
        roi_align_size=7,
        mask_size=14,
        mask_head_convs=2,
        mask_channels=4,
        box_hidden=16,
        box_roi_size=4,
        lr=0.01,
    )
    base.update(kw)
    return PipelineConfig(**base)


def small_corpus(n=2, seed=0):
    spec = SceneSpec(image_extent=(32, 32), ship_count=(2, 3), length=(8.0, 14.0), width=(3.0, 5.0), dock_probability=0.8)
    return make_corpus(spec, n, seed, train_fraction=1.0)
