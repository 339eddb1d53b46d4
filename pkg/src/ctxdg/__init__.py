"""Context-aware domain generalization on desk-scale data.

Set-encoder models that condition on an unlabeled context set from the test
environment, exact information-theoretic checks on discrete processes, and
kNN novelty detection in summary space.
"""

__version__ = "0.1.0"
