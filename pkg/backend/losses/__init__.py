from losses.composition import REQUIRED_PARTS, LossMode, LossWeights, consistency_loss, total_loss
from losses.consistency import LossTerm, PairedAngles, loss_flp, loss_rot, loss_sca
from losses.supervised import centerness_target, loss_box_ws, loss_cls, loss_cn

__all__ = [
    "REQUIRED_PARTS", "LossMode", "LossTerm", "LossWeights", "PairedAngles", "centerness_target",
    "consistency_loss", "loss_box_ws", "loss_cls", "loss_cn", "loss_flp", "loss_rot", "loss_sca", "total_loss",
]
