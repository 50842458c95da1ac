"""Real-time keypoint engine for VR facial animation.

Non-neural core of the inference dataflow: per-keypoint mouth-to-source
transform calibration, expression-frame retrieval with hysteresis, driving
frame construction, gaze fusion and filtering, and feature blending, plus a
streaming pipeline harness. Neural stages (keypoint detectors, the motion
network, the generator) are replaced by pluggable interfaces and opaque
payload references.
"""

from .alignment import (
    AlignmentModel,
    CorrespondencePair,
    DegenerateInputError,
    DimensionMismatchError,
    calibrate,
    find_correspondences,
    init_from_scale,
    project,
    refine,
    reprojection_error,
)
from .blend import (
    BlendConfig,
    FeatureGrid,
    Mask,
    ShapeMismatchError,
    blend_expression,
    downsample_mask,
    fuse_features,
)
from .core import (
    EmptyRoleError,
    FrameRecord,
    Keypoint,
    KeypointSet,
    PartitionError,
    Role,
    Transform2D,
    TransformError,
    default_roles,
)
from .driving import (
    DrivingFrame,
    DrivingFrameError,
    EyeBoundary,
    construct_driving,
    map_eye_coordinate,
)
from .eyetrack import (
    CalibrationSample,
    CollinearSamplesError,
    EyeCalibration,
    GazeState,
    detect_blink,
    filter_eye,
    filter_gain,
    fit_calibration,
    fuse,
)
from .pipeline import (
    JsonlSink,
    NullSink,
    Pipeline,
    PipelineConfig,
    PipelineState,
    RenderRequest,
    ReplayReport,
    run_replay,
)
from .retrieval import (
    ExpressionStore,
    RetrievalState,
    retrieve,
    retrieve_with_hysteresis,
    score,
)

__version__ = "0.1.0"
