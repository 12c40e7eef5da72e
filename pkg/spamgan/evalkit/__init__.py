from .metrics import (
    EvalReport,
    accuracy_f1,
    classify,
    evaluate,
    perplexity,
    train_test_split,
)
from .synth import SynthCorpus, SynthCorpusSpec, keyword_rule, make_synth_corpus
