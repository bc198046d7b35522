"""Anytime-valid tests and confidence sequences for stratified 2x2 count data."""
from .confseq import (CsGrid, CsInterval, StratumWeights, cs_all_strata, cs_max_two_sided,
                      cs_mean_effect, cs_min_lower, cs_min_two_sided, cs_min_upper,
                      cs_per_stratum, delta_grid, mean_effect_evalue, running_intersection)
from .eprocess import (GLOBAL, CombinerSpec, DecisionTrace, NullSpec, StratumState, TestConfig,
                       combine, conditional_evalue, crosstalk_mix, global_log_e, run_blocks,
                       stratum_step, test_global_null)
from .errors import (BoundaryLikelihoodZero, EmptyConfidenceSet, InfeasibleConstraint,
                     InfiniteDivergence, MalformedEvent, MisalignedHistories, NumericUnderflow)
from .ingest import (Block, BlockStream, OutcomeEvent, assemble_blocks, generate_stream,
                     read_events, write_events)
from .learners import (BetaPrior, CrossTalkMode, GroupCounts, alternative_estimates,
                       pooled_or_mle, posterior_mean, posterior_mean_or_restricted)
from .model import (BlockCounts, BlockDesign, Side, ThetaPair, block_log_lik, kl_block,
                    project_global_null, project_halfplane, project_rd_line)

__version__ = "0.1.0"
