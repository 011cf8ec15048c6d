"""knit: sparse dependency knowledge-graph inference from longitudinal coded
events via low-rank spectral PMI estimation with FDR-controlled edge selection."""

__version__ = "0.1.0"

from .cooccur import (CooccurrenceSummary, PatientCooccurrence,
                      accumulate_patient, merge, naive_count_oracle,
                      patient_summaries, summarize_cohort)
from .errors import FormatError, InputError, KnitError, NumericalError, ZeroCountError
from .inference import (EdgeTestResult, KnitOptions, Sidedness, bh_dependent,
                        bonferroni, knit, z_and_p)
from .simgen import (Cohort, DiscourseProcess, DiscourseState, EmbeddingMatrix,
                     ProcessKind, SimConfig, build_embeddings, default_alpha,
                     default_embedding_dim, estimate_marginals_mc,
                     population_pmi_mc, sample_cohort, sample_null_cohort,
                     sample_sequence, scaled_embeddings, step_discourse)
from .spectra import (PmiEstimate, PmiKind, ScalingConstant, alpha_p,
                      default_eta0, eig_sym, empirical_pmi, estimate_rank,
                      estimate_rank_fixed_point, lowrank_pmi)
from .variance import (NullCovarianceModel, PatientResiduals, SigmaBlock,
                       cov_rows_patient, null_cov_block, patient_entry_variances,
                       patient_residual_row, row_cov_null_dense, row_cov_null_fast,
                       var_empirical_entry_null, var_lowrank_entries_null,
                       var_lowrank_entry, var_lowrank_entry_null)
