"""Miniature HMM-GMM speech recognition toolkit.

Modules: ``frontend`` (MFCC features), ``corpus`` (corpus files),
``lm`` (n-gram models), ``hmm`` and ``acoustic`` (HMM-GMM training),
``decoder`` (Viterbi beam search), ``scoring`` (word alignment metrics),
``toy`` (synthetic corpora) and ``cli``.
"""

__version__ = "0.1.0"
