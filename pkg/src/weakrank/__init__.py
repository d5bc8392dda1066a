"""Weakly supervised neural ranking: BM25 pseudo-labels, feed-forward rankers,
TREC-style evaluation."""

__version__ = "0.1.0"
