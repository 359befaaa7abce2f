"""Probability-weighted fine-grained cross-modal alignment with iteratively built style prototypes."""
from .embeddings import Corpus, EmbeddingSet, ProjectionHead, l2_normalize, load_embeddings, project, save_embeddings
from .errors import ConfigurationError, CorpusFormatError, NumericalError, PicoError
from .evaluation import RetrievalReport, export_score_distribution, recall_at_k, rsum_report
from .interaction import CorrelationMatrix, aggregate_score, correlation_matrix, pair_score, score_matrix
from .probability import ProbabilityState, pseudo_semantic_probability, style_probability, to_semantic
from .prototypes import PrototypeBank, blend_prototype, epoch_update, feedback_weight
from .synthdata import GroundTruth, SynthConfig, generate_corpus, score_column_ranking
from .training import FitResult, TrainConfig, TrainState, fit

__version__ = "0.1.0"
