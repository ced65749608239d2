"""Hybrid tensor-factorization recommender with side information.

A Tucker model over (user, item, feedback) triplets whose inner products
are weighted by side-information similarity matrices, trained with a
Kronecker-free higher-order orthogonal iteration and queried by
closed-form folding-in.
"""

from .data import Dataset, load_bookcrossing, load_movielens, to_matrix, to_tensor
from .model import (HybridTuckerModel, PreferenceMatrix, TrainConfig, fold_in_item, fold_in_user,
                    round_rank, score_items, train)
from .similarity import FeatureTable, SimilarityMatrix, assemble, identity
from .tensor import SparseTensor3, build_tensor, frobenius_norm, unfold_contract

__version__ = "0.1.0"
