"""Blind receiver: joint parameter estimation, demodulation and classification."""

import os as _os

# BLAS thread pools fight the outer batch loop on small matrices; cap them
# before numpy loads unless the user already pinned the counts.
_threads = _os.environ.get("BLINDRX_THREADS")
if _threads is not None:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .exceptions import (
    BlindRxError,
    DegenerateSnrError,
    DimensionError,
    EmptyInputError,
    TrainingFault,
    UnknownClassError,
    UnsupportedSchemeError,
)
from .sigcore import (
    LabeledSample,
    DemodReport,
    ModulationScheme,
    SignalParams,
    constellation,
    n_received,
    one_hot,
    sample_at_transitions,
    timing_signal,
    transition_indices,
)
from .waveform import (
    DatasetSpec,
    RrcFilter,
    add_awgn,
    apply_cfo_phase,
    apply_channel,
    clean_params,
    dataset1,
    dataset2,
    draw_params,
    generate_sample,
    modulate_cpm,
    modulate_linear,
    rrc_pulse,
    stream_epoch,
    toy_dataset,
)
from .losses import (
    LossWeights,
    loss_classification,
    loss_mse,
    loss_phase_insensitive,
    loss_sampled_phase_insensitive,
    loss_timing,
    loss_total,
)
from .sigpath import (
    EQMF_TAP_COUNT,
    NOISE_TAP_COUNT,
    FlopReport,
    RxParams,
    align_phase,
    apply_fir,
    baseline_genie_dsp,
    correct_cfo,
    demap_min_distance,
    demod_chunked,
    fit_taps,
    lowpass_taps,
    oracle_equalized_params,
    oracle_rx_params,
    run_signal_path,
    sample_instants,
    signal_path_flops,
    signal_path_waveform,
    visible_reference,
)
from .dpn import (
    ABLATION_LABELS,
    ABLATION_LADDER,
    STAGES,
    DpnConfig,
    DpnModel,
    count_nn_flops,
    infer,
    load_model,
    save_model,
    training_forward,
)
from .harness import (
    SNR_BIN_WIDTH_DB,
    ChunkRunReport,
    EvalReport,
    SnrBinRow,
    TrainConfig,
    TrainHistory,
    ablation_run,
    chunk_experiment,
    estimated_symbol_period,
    eval_classification,
    eval_params,
    eval_ser,
    eval_ser_chunked,
    holdout_set,
    train,
    validation_set,
)
from .datafile import (
    DatasetHeader,
    generate_to_file,
    iter_dataset,
    load_dataset,
    read_header,
    regenerate,
    write_dataset,
)

__version__ = "0.1.0"
