from synthesis.patterns import (
    BasicPattern,
    SynthInstance,
    alpha_mask,
    extract_colors,
    make_basic_patterns,
    overlay_patterns,
    paste_instance,
    random_resize,
    recolor,
)
from synthesis.scenes import (
    ASYMMETRIC_FAMILIES,
    SceneConfig,
    ShapeFamily,
    gen_dataset,
    gen_symmetric_scene,
    render_scene,
    render_shape_mask,
    sample_layout,
)

__all__ = [
    "ASYMMETRIC_FAMILIES", "BasicPattern", "SceneConfig", "ShapeFamily", "SynthInstance", "alpha_mask",
    "extract_colors", "gen_dataset", "gen_symmetric_scene", "make_basic_patterns", "overlay_patterns",
    "paste_instance", "random_resize", "recolor", "render_scene", "render_shape_mask", "sample_layout",
]
