from .physics import (
    BANDS,
    GasSpectrum,
    SceneConfig,
    band_integrate,
    band_visibility,
    gas_transmittance,
    off_plume_radiance,
    on_plume_radiance,
    planck_radiance,
    radiance_difference,
)
from .render import annotate_bbox, background_gray_level, render_frame, render_radiance, visibility_map
from .clip import (
    Camera,
    ClipFormatError,
    ClipSample,
    GenConfig,
    generate_clip,
    read_clip,
    read_manifest,
    sample_clip,
    write_clip,
    write_manifest,
)
