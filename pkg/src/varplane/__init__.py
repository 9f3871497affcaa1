"""Maximal averages over annuli and tubes on variable planes, and their scaling laws."""
from .matrix_classify import Matrix2, RankProfile, classify, parse_matrix
from .kernels import BACKEND

__all__ = ["Matrix2", "RankProfile", "classify", "parse_matrix", "BACKEND"]
__version__ = "0.1.0"
