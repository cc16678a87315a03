"""Sign-programmable reflecting-surface precoding sandbox.

Channel draws, zero-forcing rate evaluation, discrete sign searches, and a
learned per-element classifier bank that shortcuts the search at inference
time.
"""

from .bank import (
    ClassifierBank,
    TrainConfig,
    accuracy_table,
    channel_phases,
    load_bank,
    phase_features,
    predict_signs,
    predict_signs_batch,
    save_bank,
    train_bank,
    train_bank_adaptive,
)
from .channel import (
    GppChannelConfig,
    SVChannelConfig,
    SystemConfig,
    array_response,
    draw_channel,
    feeder_gains,
    make_system,
    substream,
)
from .dataio import (
    DataSample,
    Dataset,
    dataset_arrays,
    generate_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .errors import (
    ChecksumError,
    ConfigError,
    DataFormatError,
    EnumerationLimitError,
    ShapeMismatchError,
    SingularMatrixError,
    TruncatedFileError,
    VersionMismatchError,
)
from .optim import (
    CrossEntropyParams,
    OptimResult,
    cross_entropy_search,
    cross_entropy_search_many,
    exhaustive_search,
    matched_filter_signs,
    random_signs,
)
from .precoding import (
    canonical_signs,
    effective_channel,
    sum_rate,
    user_sinr,
    zf_precoder,
    zf_sum_rate,
    zf_sum_rate_batch,
)

__version__ = "0.1.0"
