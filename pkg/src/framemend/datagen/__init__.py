"""Procedural synthesis of paired supervision data (five streams)."""

from .dataset import (  # noqa: F401
    DatasetConfig,
    PairedSample,
    allocate_stream_counts,
    build_dataset,
    load_manifest,
    load_sample,
    save_sample,
)
from .isp import IDENTITY_PARAMS, IspParams, apply_isp, make_isp_pair, sample_isp_params  # noqa: F401
from .scene import (  # noqa: F401
    Box,
    Camera,
    LightDelta,
    RenderResult,
    SceneSpec,
    Sphere,
    make_reinsert_pair,
    make_shadow_pair,
    relight_fg,
    render_scene,
)
from .degrade import degrade  # noqa: F401
from .streams import STREAMS, generate_sample  # noqa: F401
