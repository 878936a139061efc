from .anchors import AnchorSet, generate_anchor_array, generate_anchors
from .annotations import (
    Annotation,
    AnnotationFormatError,
    instances_to_annotations,
    read_annotations,
    rle_decode,
    rle_encode,
    write_annotations,
)
from .boxes import (
    Box,
    boxes_to_array,
    clip_boxes,
    decode_array,
    decode_deltas,
    encode_array,
    encode_deltas,
    iou,
    iou_matrix,
    mask_to_box,
)
from .nms import nms, nms_indices
from .tiling import TileSpec, candidate_tile, tile_image

__all__ = [name for name in dir() if not name.startswith("_")]
