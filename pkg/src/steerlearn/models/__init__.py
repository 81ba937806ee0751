from .builders import (
    CONV3D_LSTM_PARAM_COUNT,
    NVIDIA_PARAM_COUNT,
    TRANSFER_PARAM_COUNT,
    TRANSFER_PARAM_COUNT_WITH_BN_STATS,
    build_conv3d_lstm,
    build_nvidia,
    build_transfer,
    load_conv3d_lstm_config,
    rebuild,
)
from .graph import GraphBuilder, Layer, ModelGraph, forward, param_count, param_nodes
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointFormatError,
    CheckpointVersionError,
    ImportReport,
    TensorMismatchError,
    TruncatedCheckpointError,
    UnknownParameterError,
    import_named_tensors,
    load_checkpoint,
    load_model,
    restore,
    save_checkpoint,
    write_tensors,
)
