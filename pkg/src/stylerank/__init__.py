"""Style-compatibility ranking for furniture catalogs.

Learns a per-image style spectrum from noisy multi-expert annotations by
training on pairwise comparisons, then ranks furniture items and whole
scenes by embedding distance. Ships a CLI (``stylerank``) and an HTTP
suggestion service.
"""

from .dataset import (AnnotationStore, Dataset, FeatureTable,
                      ValidationSetSpec, assign_splits, build_style_set,
                      ingest_annotations, load_features, save_features)
from .comparisons import (ComparisonConfig, ComparisonLabel, eligible_pair,
                          enumerate_comparisons, sample_comparisons)
from .stylenet import (StyleHead, TrainConfig, TrainResult, batch_gradient,
                       bt_loss, comparison_predict, extract_embedding,
                       forward, grid_search, load_checkpoint,
                       save_checkpoint, train)
from .compat import (CompatibilityIndex, FurnitureItem, FurnitureRegistry,
                     build_index, embedding_distance, furniture_distance,
                     load_index, rank_multi_seed, rank_single_seed,
                     save_index, scene_energy)
from .evaluation import (baseline_train_discrete, classification_accuracy,
                         classify, evaluate_retrieval, evaluation_report,
                         expert_agreement_matrix, retrieve_nearest)
from .errors import (DivergenceError, FormatError, IngestError,
                     SparsePopulationError, StaleIndexError, StyleRankError,
                     UnknownItemError, UnrankableItemError)

__version__ = "0.1.0"
