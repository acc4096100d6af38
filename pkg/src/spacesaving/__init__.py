"""Unbiased and Deterministic Space Saving sketches for frequent items and
disaggregated subset sums, with merges, sampling baselines and an
experiment harness."""

from .estimation import (QueryResult, SubsetQuery, coverage, normal_quantile,
                         pps_variance_bound, subset_sum)
from .harness import EvalReport, ExperimentConfig, ingest_csv, report_write, run
from .merge import MergeResult, merge_misra_gries, merge_unbiased
from .reductions import ReducedSummary, reduce_pps, solve_threshold, to_misra_gries
from .sampling import (BottomKSample, PrioritySample, PrioritySampler, SampleAndHold,
                       bottom_k_estimate, bottom_k_sample, priority_estimate,
                       priority_sample, sample_and_hold_estimate,
                       sample_and_hold_update)
from .sketch import DETERMINISTIC, UNBIASED, SpaceSaving, from_bins, new_sketch
from .streams import (GroundTruth, StreamSpec, emit, epochs, weibull_counts)
from .validation import (ConfigError, InvalidCapacityError, InvalidInputError,
                         InvalidThresholdError, InvalidWeightError, RowError,
                         SchemaError, SketchError)

__version__ = "0.1.0"
