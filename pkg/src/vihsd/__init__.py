"""Three-class (CLEAN / OFFENSIVE / HATE) short-text classification toolkit."""

from .corpus import ClassLabel, DataError, LabeledDocument, class_stats, load_csv, split, write_csv
from .preprocess import PreprocessConfig, normalize, preprocess_corpus
from .recurrent import RecurrentClassifier
from .train_eval import MetricsReport, RunRecord, TrainConfig, evaluate
from .vocab import Vocabulary, build_vocab, encode, load_embeddings

__version__ = "0.1.0"
