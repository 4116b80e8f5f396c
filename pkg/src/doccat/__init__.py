"""Support-ticket categorization: Naive Bayes, softmax regression and BiLSTM classifiers plus a routing service."""

__version__ = "0.1.0"
