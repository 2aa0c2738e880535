from views.transforms import (
    DEFAULT_ROTATION_RANGE,
    DEFAULT_SCALE_RANGE,
    VIEW_DISTRIBUTIONS,
    PaddingMode,
    ViewKind,
    ViewMode,
    ViewTransform,
    apply_view,
    sample_view,
    warp_image,
)

__all__ = [
    "DEFAULT_ROTATION_RANGE", "DEFAULT_SCALE_RANGE", "VIEW_DISTRIBUTIONS", "PaddingMode", "ViewKind",
    "ViewMode", "ViewTransform", "apply_view", "sample_view", "warp_image",
]
