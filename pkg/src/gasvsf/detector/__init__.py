from .boxes import AnchorConfig, Detection, decode, encode, iou_matrix, make_anchors, nms, nms_detections
from .model import (
    VARIANTS,
    Model,
    ModelConfig,
    assign_rpn_targets,
    build_model,
    head_forward,
    infer_clip,
    mean_gt_box,
    rpn_loss,
    unit_loss,
)
from .train import (
    DivergenceError,
    TrainConfig,
    TrainResult,
    load_clips,
    load_params,
    predict,
    read_detections,
    save_params,
    train,
    write_detections,
    write_loss_csv,
)
