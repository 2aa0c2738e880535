import torch

from geometry.boxes import RBoxLike, as_rboxes
from geometry.overlaps import rotated_iou


@torch.no_grad()
def rbox_nms(boxes: RBoxLike, scores, iou_thresh: float) -> list[int]:
    """Greedy rotated NMS.

    Boxes are visited by descending score (input order breaks ties); a box is
    kept when its IoU with every previously kept box is below `iou_thresh`.

    Returns:
        Indices of kept boxes, in visiting order.
    """
    boxes = as_rboxes(boxes).reshape(-1, 5)
    scores = torch.as_tensor(scores, dtype=torch.float64).reshape(-1)
    if boxes.shape[0] == 0:
        return []
    if not torch.isfinite(scores).all():
        raise ValueError("rbox_nms needs finite scores")

    order = torch.sort(-scores, stable=True).indices
    suppressed = torch.zeros(boxes.shape[0], dtype=torch.bool)
    keep: list[int] = []
    for idx in order.tolist():
        if suppressed[idx]:
            continue
        keep.append(idx)
        ious = rotated_iou(boxes[idx].expand_as(boxes), boxes)
        suppressed |= ious >= iou_thresh
    return keep
