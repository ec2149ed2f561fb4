"""Consistency-aware aggregation of noisy partial rankings into a global ranking."""

from .aggregator import (
    GlobalRanking,
    LeastSquaresSystem,
    aggregate,
    build_system,
    dense_ls_oracle,
    solve_global_ranking,
    top_m,
)
from .core import (
    AlternativeSet,
    InvalidParameterError,
    Item,
    MalformedBatchError,
    ObservationPool,
    PartialRanking,
    PreferenceMatrix,
    RankerFailure,
    RankingError,
    ShuffleBatch,
    build_preference_matrix,
    collect_pool,
    shuffle_and_split,
)
from .metrics import dcg, kendall_tau, ndcg, neural_ndcg, neural_sort_matrix, sinkhorn_scale, top1_regret
from .rankers import LinearListRanker, NoisyRanker, OracleRanker, RankerModel, linear_rank, noisy_rank, oracle_rank
from .tournament import TournamentTrace, naive_tournament
from .training import (
    RankingDataset,
    TrainConfig,
    composite_loss,
    margin_loss,
    mse_loss,
    train_linear_ranker,
)
from .world import make_synthetic_world, retrieve_alternatives

__version__ = "0.1.0"
