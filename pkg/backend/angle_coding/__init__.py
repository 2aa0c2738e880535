from angle_coding.gate_decoder import bin2dec, scale_factor
from angle_coding.phase_coder import (
    N_ENC,
    angle_decode,
    angle_encode,
    decode_predicted,
    fold_difference,
    smooth_l1,
    snap_loss,
    wrap_half_pi,
)

__all__ = [
    "N_ENC", "angle_decode", "angle_encode", "bin2dec", "decode_predicted", "fold_difference", "scale_factor",
    "smooth_l1", "snap_loss", "wrap_half_pi",
]
