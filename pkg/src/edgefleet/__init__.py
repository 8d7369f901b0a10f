"""edgefleet: quantize, package, deploy, run, and monitor tiny image
classifiers across a fleet of (simulated) edge devices."""

__version__ = "0.1.0"

from .tensor import (  # noqa: F401
    Conv2D,
    Dense,
    Flatten,
    MaxPool2D,
    ModelGraph,
    OpCounters,
    ReLU,
    ShapeError,
    Softmax,
    argmax,
    forward_fp32,
)
from .quantize import (  # noqa: F401
    CalibrationStats,
    QTensor,
    QuantizationParams,
    QuantizedModel,
    calibrate,
    compute_params_asymmetric,
    compute_params_symmetric,
    dequantize,
    forward_quantized,
    quantize,
    quantize_model_dynamic,
    quantize_model_static,
    size_report,
)
from .bundle import (  # noqa: F401
    ArtifactBundle,
    ArtifactManifest,
    IntegrityError,
    ManifestError,
    ParseError,
    compare_versions,
    pack,
    parse_version,
    read_envelope,
    unpack,
)
from .vqi import (  # noqa: F401
    AssetConditionUpdate,
    ClassPrediction,
    ConditionMapError,
    ImageFormatError,
    classify_image,
    decode_ppm,
    encode_ppm,
    map_condition,
    postprocess,
    preprocess,
)
from .toydata import (  # noqa: F401
    ToyDatasetSpec,
    TrainConfig,
    TrainingError,
    Xoshiro256StarStar,
    calibration_samples,
    evaluate_accuracy,
    generate_dataset,
    train_model,
)
from .registry import Registry, RegistryConfig  # noqa: F401
from .httpd import ServerThread, make_server  # noqa: F401
from .client import ApiError, RegistryClient  # noqa: F401
from .agent import AgentConfig, EdgeAgent, UnavailableError  # noqa: F401
from .bench import BenchmarkInput, BenchmarkReport, run_benchmark  # noqa: F401
