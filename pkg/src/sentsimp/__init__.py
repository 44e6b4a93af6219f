"""Sentence simplification toolkit: seq2seq model with word copying, sentence
aligner, evaluation metrics, synthetic corpora and a training CLI."""

__version__ = "0.1.0"
