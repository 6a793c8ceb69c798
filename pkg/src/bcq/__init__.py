"""Block clustered quantization: codebook calibration, stream codec, baselines."""

__version__ = "0.1.0"

from .baselines import BaselineSpec, nmse, parse_baseline, quantize_baseline
from .calibrate import (
    CalibTrace,
    CodebookFamily,
    QuantConfig,
    calibrate,
    calibrate_tensor,
    freeze_family,
    init_family,
    load_family,
    map_block,
    map_blocks,
    normalize_blocks,
    save_family,
)
from .codec import (
    BitwidthReport,
    EncodedTensor,
    compression_factor,
    decode,
    dump_stream,
    effective_bitwidth,
    encode,
    parse_stream,
    read_stream,
    tensor_scale,
    write_stream,
)
from .errors import (
    BadMagic,
    BcqError,
    CorruptStream,
    DataError,
    EmptyTensor,
    FamilyMismatch,
    NonFiniteInput,
    NotMultiple,
    ShapeMismatch,
    TruncatedPayload,
    ValidationError,
)
from .formats import (
    E4M3,
    FpFormat,
    IntFormat,
    compute_scale,
    enumerate_codewords,
    max_level,
    parse_format,
    quantize_e8m0,
    quantize_rtn,
)
from .harness import (
    EvalReport,
    EvalRow,
    Experiment,
    TensorSource,
    emit_report,
    emit_sweep,
    parse_experiment,
    run_experiment,
    sweep_configs,
)
from .lloydmax import LloydMaxResult, assign, lloyd_max, lloyd_max_best
from .tensor_io import (
    BlockDecomposition,
    TensorView,
    decompose,
    load_tensor,
    parse_dist,
    save_tensor,
    synth_tensor,
)
