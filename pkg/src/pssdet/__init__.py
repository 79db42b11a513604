"""Low-complexity PSS detection with cluster-quantized correlators.

The package splits into five layers: reference waveform synthesis
(:mod:`pssdet.pss`), weighted k-means template quantization
(:mod:`pssdet.clustering`), the three correlator engines with exact
operation accounting (:mod:`pssdet.correlator`), channel and capture
simulation (:mod:`pssdet.channel`), and the detection pipeline with
its Monte Carlo experiments (:mod:`pssdet.detector`).  The ``pssdet``
console script in :mod:`pssdet.cli` drives all of it.
"""

from .pss import (
    CONJUGATE_ROOT,
    CP_LENGTH,
    PSS_ROOTS,
    ZC_LENGTH,
    FreqGrid,
    PssWaveform,
    ZcSequence,
    add_cyclic_prefix,
    conjugate_root,
    map_to_subcarriers,
    pss_time_domain,
    read_iq,
    read_waveform_csv,
    write_iq,
    write_waveform_csv,
    zc_sequence,
)
from .clustering import (
    ClusterTable,
    conjugate_table,
    kmeans_cluster,
    load_table,
    save_table,
)
from .correlator import (
    InterferenceTrace,
    MetricTrace,
    OpCount,
    bench_ops,
    cluster_correlate,
    interference_term,
    mf_correlate,
    mf_correlate_optimized,
)
from .channel import (
    ChannelScenario,
    RxStream,
    apply_channel,
    doppler_hz,
    embed_pss_in_halfframe,
    merge_taps,
    normalized_cfo,
    read_stream,
    tu6_profile,
    tu6_scenario,
    upsample_by_2,
    write_stream,
)
from .detector import (
    DETECT_TOLERANCE,
    AcquisitionResult,
    BatchEvaluator,
    DetectionResult,
    EngineConfig,
    PmdPoint,
    PreparedEngine,
    acquisition_cdf,
    acquisition_experiment,
    calibrate_threshold,
    calibrate_thresholds,
    detect,
    median_time_ci,
    pmd_crossing_db,
    pmd_experiment,
    prepare_engine,
    wilson_ci,
)

__version__ = "0.1.0"

__all__ = [
    "DETECT_TOLERANCE",
    "AcquisitionResult",
    "ChannelScenario",
    "ClusterTable",
    "CONJUGATE_ROOT",
    "CP_LENGTH",
    "DetectionResult",
    "EngineConfig",
    "FreqGrid",
    "InterferenceTrace",
    "MetricTrace",
    "OpCount",
    "PmdPoint",
    "PreparedEngine",
    "PSS_ROOTS",
    "PssWaveform",
    "RxStream",
    "ZC_LENGTH",
    "ZcSequence",
    "BatchEvaluator",
    "acquisition_cdf",
    "acquisition_experiment",
    "add_cyclic_prefix",
    "apply_channel",
    "bench_ops",
    "calibrate_threshold",
    "calibrate_thresholds",
    "cluster_correlate",
    "conjugate_root",
    "conjugate_table",
    "detect",
    "doppler_hz",
    "embed_pss_in_halfframe",
    "interference_term",
    "kmeans_cluster",
    "load_table",
    "map_to_subcarriers",
    "median_time_ci",
    "merge_taps",
    "mf_correlate",
    "mf_correlate_optimized",
    "normalized_cfo",
    "pmd_crossing_db",
    "pmd_experiment",
    "prepare_engine",
    "pss_time_domain",
    "read_iq",
    "read_stream",
    "read_waveform_csv",
    "save_table",
    "tu6_profile",
    "tu6_scenario",
    "upsample_by_2",
    "wilson_ci",
    "write_iq",
    "write_stream",
    "write_waveform_csv",
    "zc_sequence",
]
