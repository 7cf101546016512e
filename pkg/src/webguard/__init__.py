"""Behavioral forensics for browser-event traces.

Ingests spatio-temporal event streams, clusters unlabeled sessions into
agent classes offline (per-trace HMMs, pairwise Jeffreys divergences,
spectral or agglomerative clustering), and classifies live sessions with
sequential multiclass tests over a bank of class HMMs.
"""

__version__ = "0.1.0"

from .cluster import (
    ClusterConfig,
    ClusterResult,
    ClusteringMetrics,
    agglomerative_cluster,
    attribute,
    clustering_metrics,
    spectral_cluster,
)
from .detect import (
    ClassifierBank,
    Decision,
    SessionState,
    classify_margin,
    classify_repeat,
    evaluate_detector,
    fit_bank,
    margin,
    update,
)
from .divergence import (
    DivergenceConfig,
    DivMatrix,
    jeffreys_exact,
    jeffreys_mc,
    pairwise_divergence,
)
from .hmm import (
    Hmm,
    TrainConfig,
    baum_welch_fit,
    forward_log_likelihood,
    sample,
    t_letter_distribution,
    with_stationary_initial,
)
from .preprocess import (
    KinematicSequence,
    PreprocessConfig,
    ProcessedTrace,
    QuantizerModel,
    compute_kinematics,
    fit_quantizer,
    preprocess,
    quantize,
    replicate_by_interarrival,
    scalarize,
)
from .simulate import (
    GENERATORS,
    SimConfig,
    gen_crawler,
    gen_humanlike,
    gen_random_delayed,
    gen_random_naive,
    gen_scanner,
    gen_ui_fuzzer,
    generate_corpus,
    replay,
)
from .theory import (
    FiniteDist,
    empirical_exponent_ratio,
    kl,
    sampled_exponent,
    subset_average_first_term,
)
from .trace import (
    EVENT_CATALOG,
    EventRecord,
    Trace,
    catalog_lookup,
    catalog_name,
    parse_trace_file,
    serialize_trace_file,
)
