from .metrics import (
    ERROR_TYPES,
    EvalReport,
    average_precision,
    clip_instances,
    coco_ap,
    evaluate_clips,
    iou,
    iou_density,
    mean_ap,
    tide_classify,
)
from .objectness import (
    ObjectnessScores,
    cc_score,
    ed_score,
    hog_descriptor,
    ms_score,
    objectness,
    ss_score,
)
